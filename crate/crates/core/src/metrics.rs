//! Network-level metrics and cut-off detection over key-rate sweeps.

use serde::Serialize;

use crate::control::ScenarioLabel;

/// The four figures of merit. Each is the mean over nodes of the per-node
/// mean; absent when no node has a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub t_msg_ne_ms: Option<f64>,
    pub t_key_ms: Option<f64>,
    pub t_msg_km_ms: Option<f64>,
    pub n_msg_km: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TMsgNe,
    TKey,
    TMsgKm,
    NMsgKm,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::TMsgNe, Metric::TKey, Metric::TMsgKm, Metric::NMsgKm];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TMsgNe => "t_msg_ne_ms",
            Metric::TKey => "t_key_ms",
            Metric::TMsgKm => "t_msg_km_ms",
            Metric::NMsgKm => "n_msg_km",
        }
    }
}

impl RunMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::TMsgNe => self.t_msg_ne_ms,
            Metric::TKey => self.t_key_ms,
            Metric::TMsgKm => self.t_msg_km_ms,
            Metric::NMsgKm => self.n_msg_km,
        }
    }

    /// Element-wise mean over runs; a metric absent in every run stays absent.
    pub fn mean(runs: &[RunMetrics]) -> RunMetrics {
        let avg = |m: Metric| mean_of_node_means(runs.iter().map(|r| r.get(m)));
        RunMetrics {
            t_msg_ne_ms: avg(Metric::TMsgNe),
            t_key_ms: avg(Metric::TKey),
            t_msg_km_ms: avg(Metric::TMsgKm),
            n_msg_km: avg(Metric::NMsgKm),
        }
    }
}

/// Mean of the present values.
pub fn mean_of_node_means(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0u32), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / f64::from(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cutoff {
    /// Largest rate whose metric is still far above the plateau.
    pub rate: Option<f64>,
    pub plateau: f64,
    /// The metric does not fall monotonically up to the cut-off.
    pub low_confidence: bool,
}

/// Locates the key rate below which a metric departs from its high-rate
/// plateau. The plateau is the median over the top quarter of the rates; the
/// cut-off is the largest rate whose value exceeds `factor` times the
/// plateau. A missing value counts as unbounded.
pub fn detect_cutoff(points: &[(f64, Option<f64>)], factor: f64) -> Option<Cutoff> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(r, v)| (r, v.unwrap_or(f64::INFINITY))).collect();
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = pts.len().div_ceil(4);
    let mut tail: Vec<f64> = pts[pts.len() - top..].iter().map(|p| p.1).collect();
    tail.sort_by(f64::total_cmp);
    let plateau = if tail.len() % 2 == 1 {
        tail[tail.len() / 2]
    } else {
        (tail[tail.len() / 2 - 1] + tail[tail.len() / 2]) / 2.0
    };
    let above = pts.iter().rposition(|p| p.1 > factor * plateau);
    let rate = above.map(|i| pts[i].0);
    let low_confidence = match above {
        Some(i) => pts[..=i].windows(2).any(|w| w[1].1 > w[0].1),
        None => false,
    };
    Some(Cutoff {
        rate,
        plateau,
        low_confidence,
    })
}

/// One (scenario, key rate) point of a sweep, averaged over seeds.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub scenario: ScenarioLabel,
    pub key_rate: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<RunMetrics>,
    pub mean: RunMetrics,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn series(&self, scenario: ScenarioLabel, m: Metric) -> Vec<(f64, Option<f64>)> {
        let mut s: Vec<(f64, Option<f64>)> = self
            .points
            .iter()
            .filter(|p| p.scenario == scenario)
            .map(|p| (p.key_rate, p.mean.get(m)))
            .collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    }

    pub fn seed_series(&self, scenario: ScenarioLabel, seed: u64, m: Metric) -> Vec<(f64, Option<f64>)> {
        let mut s: Vec<(f64, Option<f64>)> = self
            .points
            .iter()
            .filter(|p| p.scenario == scenario)
            .filter_map(|p| {
                let i = p.seeds.iter().position(|&x| x == seed)?;
                Some((p.key_rate, p.per_seed[i].get(m)))
            })
            .collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    }

    pub fn cutoff(&self, scenario: ScenarioLabel, m: Metric, factor: f64) -> Option<Cutoff> {
        detect_cutoff(&self.series(scenario, m), factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_means_ignore_absent() {
        assert_eq!(mean_of_node_means([Some(1.0), None, Some(3.0)]), Some(2.0));
        assert_eq!(mean_of_node_means([None, None]), None);
    }

    #[test]
    fn cutoff_on_hockey_stick() {
        let pts = [
            (10.0, Some(900.0)),
            (25.0, Some(400.0)),
            (50.0, Some(3.0)),
            (100.0, Some(2.1)),
            (200.0, Some(2.0)),
            (340.0, Some(2.0)),
            (500.0, Some(2.0)),
        ];
        let c = detect_cutoff(&pts, 2.0).unwrap();
        assert_eq!(c.plateau, 2.0);
        assert_eq!(c.rate, Some(25.0));
        assert!(!c.low_confidence);
    }

    #[test]
    fn flat_series_has_no_cutoff() {
        let pts: Vec<(f64, Option<f64>)> = [10.0, 20.0, 30.0].iter().map(|&r| (r, Some(1.0))).collect();
        assert_eq!(detect_cutoff(&pts, 2.0).unwrap().rate, None);
    }

    #[test]
    fn missing_values_count_as_starved() {
        let pts = [(10.0, None), (100.0, Some(1.0)), (200.0, Some(1.0))];
        assert_eq!(detect_cutoff(&pts, 2.0).unwrap().rate, Some(10.0));
    }

    #[test]
    fn non_monotone_flagged() {
        let pts = [(10.0, Some(50.0)), (20.0, Some(90.0)), (30.0, Some(1.0)), (40.0, Some(1.0))];
        let c = detect_cutoff(&pts, 2.0).unwrap();
        assert_eq!(c.rate, Some(20.0));
        assert!(c.low_confidence);
    }

    proptest! {
        #[test]
        fn cutoff_matches_brute_force(vals in proptest::collection::vec(0.1f64..1000.0, 1..12)) {
            let pts: Vec<(f64, Option<f64>)> = vals.iter().enumerate().map(|(i, v)| ((i + 1) as f64, Some(*v))).collect();
            let c = detect_cutoff(&pts, 2.0).unwrap();
            // oracle: sort the top quarter, take its median, scan from the top
            let k = vals.len().div_ceil(4);
            let mut top = vals[vals.len() - k..].to_vec();
            top.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = if k % 2 == 1 { top[k / 2] } else { (top[k / 2 - 1] + top[k / 2]) / 2.0 };
            prop_assert_eq!(c.plateau, med);
            let mut expect = None;
            for (i, v) in vals.iter().enumerate() {
                if *v > 2.0 * med {
                    expect = Some((i + 1) as f64);
                }
            }
            prop_assert_eq!(c.rate, expect);
        }
    }
}
