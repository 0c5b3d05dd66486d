//! Checks of a run against the Padua field-trial reference counts.

use std::time::Duration;

use crate::sim::RunResult;

pub const REF_TX_PACKETS: f64 = 179_700.0;
pub const REF_TX_TOLERANCE: f64 = 0.005;
pub const REF_RX_GAP: u64 = 300;
pub const REF_CONSUMED_KEYS: (u64, u64) = (480, 485);
pub const REF_GENERATED_FSO: f64 = 5_820.0;
pub const REF_GENERATED_FIBER: f64 = 39_023.0;
pub const REF_GENERATED_TOLERANCE: f64 = 0.03;
pub const REF_RELAYED_KEYS: u64 = 483;
pub const REF_RELAYED_TOLERANCE: u64 = 5;
pub const REF_SETUP_S: (f64, f64) = (2.0, 3.5);
pub const MAX_WALL_TIME: Duration = Duration::from_secs(60);

/// The node path of the trial.
pub const PADUA_PATH: [(u32, u32); 3] = [(1, 2), (2, 3), (3, 6)];

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn within(value: f64, reference: f64, rel: f64) -> bool {
    (value - reference).abs() <= rel * reference
}

/// Packet counts, consumed keys, generated keys, relayed keys and setup time.
pub fn padua_checks(run: &RunResult) -> Vec<Check> {
    let mut out = Vec::new();
    let (tx, rx) = (run.tx(), run.rx());
    out.push(Check {
        name: "packets",
        pass: within(tx as f64, REF_TX_PACKETS, REF_TX_TOLERANCE)
            && tx.abs_diff(rx) <= REF_RX_GAP
            && run.wall_time < MAX_WALL_TIME,
        detail: format!(
            "tx {tx} (reference {REF_TX_PACKETS}), rx {rx}, wall {:.2} s",
            run.wall_time.as_secs_f64()
        ),
    });

    let consumed = run.ne_consumed_keys();
    out.push(Check {
        name: "consumed keys",
        pass: (REF_CONSUMED_KEYS.0..=REF_CONSUMED_KEYS.1).contains(&consumed),
        detail: format!("{consumed} keys consumed by the encryptor"),
    });

    let mut gen_ok = true;
    let mut gen_detail = Vec::new();
    for (a, b) in PADUA_PATH {
        let reference = if (a, b) == (3, 6) { REF_GENERATED_FIBER } else { REF_GENERATED_FSO };
        match run.link(a, b) {
            Some(l) => {
                let ok = within(l.generated_in_window as f64, reference, REF_GENERATED_TOLERANCE);
                gen_ok &= ok;
                gen_detail.push(format!("{a}-{b}: {} (reference {reference})", l.generated_in_window));
            }
            None => {
                gen_ok = false;
                gen_detail.push(format!("{a}-{b}: missing"));
            }
        }
    }
    out.push(Check {
        name: "generated keys",
        pass: gen_ok,
        detail: gen_detail.join(", "),
    });

    let mut rel_ok = true;
    let mut rel_detail = Vec::new();
    for (a, b) in PADUA_PATH {
        let v = run.link(a, b).map_or(0, |l| l.relayed_keys);
        rel_ok &= v.abs_diff(REF_RELAYED_KEYS) <= REF_RELAYED_TOLERANCE;
        rel_detail.push(format!("{a}-{b}: {v}"));
    }
    out.push(Check {
        name: "relayed keys",
        pass: rel_ok,
        detail: rel_detail.join(", "),
    });

    let setup = run.traffic_start.unwrap_or(run.setup_complete).as_secs_f64();
    out.push(Check {
        name: "setup time",
        pass: (REF_SETUP_S.0..=REF_SETUP_S.1).contains(&setup),
        detail: format!(
            "traffic starts at {setup:.4} s (all nodes configured at {:.4} s)",
            run.setup_complete.as_secs_f64()
        ),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_bands() {
        assert!(within(179_700.0 * 1.005, REF_TX_PACKETS, REF_TX_TOLERANCE));
        assert!(!within(179_700.0 * 1.006, REF_TX_PACKETS, REF_TX_TOLERANCE));
        assert!(within(5_820.0 * 0.971, REF_GENERATED_FSO, REF_GENERATED_TOLERANCE));
        assert!(!within(5_820.0 * 0.969, REF_GENERATED_FSO, REF_GENERATED_TOLERANCE));
    }
}
