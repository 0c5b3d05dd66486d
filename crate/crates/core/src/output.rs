//! Result files: CSV tables, gnuplot data blocks and a JSON run summary.
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! reader never sees a half-written table. Numbers use fixed precision so
//! equal runs give byte-identical files.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::control::ScenarioLabel;
use crate::metrics::{Metric, RunMetrics, SweepResult};
use crate::sim::RunResult;

/// Schema version of the CSV and JSON outputs.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "QKDNSIM_OUT";

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, OutputError> {
    write_atomic(&path, text.as_bytes()).map_err(|source| OutputError {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(_) => "inf".into(),
        None => "NA".into(),
    }
}

fn rate(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.4}")
    }
}

const METRIC_HEADER: &str = "scenario,key_rate_kps,seed,t_msg_ne_ms,t_key_ms,t_msg_km_ms,n_msg_km";

fn metric_row(out: &mut String, label: ScenarioLabel, key_rate: &str, seed: &str, m: &RunMetrics) {
    let _ = writeln!(
        out,
        "{label},{key_rate},{seed},{},{},{},{}",
        num(m.t_msg_ne_ms),
        num(m.t_key_ms),
        num(m.t_msg_km_ms),
        num(m.n_msg_km)
    );
}

/// One row per (scenario, rate, seed) plus a `mean` row per point.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = format!("{METRIC_HEADER}\n");
    for p in &sweep.points {
        let r = rate(p.key_rate);
        for (seed, m) in p.seeds.iter().zip(&p.per_seed) {
            metric_row(&mut out, p.scenario, &r, &seed.to_string(), m);
        }
        metric_row(&mut out, p.scenario, &r, "mean", &p.mean);
    }
    out
}

/// Long form: one row per (scenario, rate, metric) of the seed means.
pub fn figure_long_csv(sweep: &SweepResult) -> String {
    let mut out = String::from("scenario,key_rate_kps,metric,value\n");
    for p in &sweep.points {
        for m in Metric::ALL {
            let _ = writeln!(out, "{},{},{},{}", p.scenario, rate(p.key_rate), m.name(), num(p.mean.get(m)));
        }
    }
    out
}

/// gnuplot data for one metric: one indexed block per scenario.
pub fn gnuplot_block(sweep: &SweepResult, metric: Metric) -> String {
    let mut out = format!("# {} versus key rate (keys/s); one block per scenario\n", metric.name());
    let mut first = true;
    for label in ScenarioLabel::ALL {
        let series = sweep.series(label, metric);
        if series.is_empty() {
            continue;
        }
        if !first {
            out.push_str("\n\n");
        }
        first = false;
        let _ = writeln!(out, "# scenario {label}");
        for (r, v) in series {
            let v = match v {
                Some(x) if x.is_finite() => format!("{x:.6}"),
                _ => "NaN".into(),
            };
            let _ = writeln!(out, "{} {v}", rate(r));
        }
    }
    out
}

pub fn run_metrics_csv(run: &RunResult, key_rate: Option<f64>) -> String {
    let mut out = format!("{METRIC_HEADER}\n");
    let r = key_rate.map(rate).unwrap_or_else(|| "topology".into());
    metric_row(&mut out, run.label, &r, &run.seed.to_string(), &run.metrics);
    out
}

pub fn nodes_csv(run: &RunResult) -> String {
    let mut out = String::from(
        "node,t_msg_ne_ms,t_key_ms,t_msg_km_ms,n_msg_km,n_cm_km,transports_started,transports_completed,transports_failed,forwarded,status_emitted,pushes_received\n",
    );
    for n in &run.nodes {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{},{}",
            n.node,
            num(n.t_msg_ne_ms),
            num(n.t_key_ms),
            num(n.t_msg_km_ms),
            n.n_msg_km,
            n.n_cm_km,
            n.transports_started,
            n.transports_completed,
            n.transports_failed,
            n.messages_forwarded,
            n.status_emitted,
            n.pushes_received
        );
    }
    out
}

pub fn links_csv(run: &RunResult) -> String {
    let mut out = String::from(
        "link,a,b,key_rate,generated,consumed_a,consumed_b,stored_a,stored_b,discarded_a,discarded_b,relayed_keys,relayed_bundles,transport_keys,ack_keys,cm_keys\n",
    );
    for l in &run.links {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{},{},{},{},{},{},{},{},{},{},{}",
            l.link.0,
            l.a,
            l.b,
            l.key_rate,
            l.generated,
            l.consumed[0],
            l.consumed[1],
            l.stored[0],
            l.stored[1],
            l.discarded[0],
            l.discarded[1],
            l.relayed_keys,
            l.relayed_bundles,
            l.transport_keys,
            l.ack_keys,
            l.cm_keys
        );
    }
    out
}

pub fn sessions_csv(run: &RunResult) -> String {
    let mut out = String::from("node,peer,start_s,tx,rx,sent,consumed_keys,requests,failed_requests,censored,mean_latency_ms\n");
    for s in &run.sessions {
        let st = &s.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.node,
            s.peer,
            num(s.start_s),
            st.tx,
            st.rx,
            st.sent,
            st.consumed_keys,
            st.requests,
            st.failed_requests,
            st.censored,
            num(st.mean_latency().map(|t| t.as_millis_f64()))
        );
    }
    out
}

pub fn summary_json(run: &RunResult, key_rate: Option<f64>) -> String {
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": run.label.to_string(),
        "seed": run.seed,
        "key_rate_kps": key_rate,
        "setup_complete_s": run.setup_complete.as_secs_f64(),
        "traffic_start_s": run.traffic_start.map(|t| t.as_secs_f64()),
        "end_s": run.end.as_secs_f64(),
        "metrics": run.metrics,
        "tx_packets": run.tx(),
        "rx_packets": run.rx(),
        "ne_consumed_keys": run.ne_consumed_keys(),
        "transports": run.transports,
        "events": run.events,
        "control": run.cm,
        "channel": {
            "sent": run.channel.sent,
            "collisions": run.channel.collisions,
            "lost": run.channel.lost,
        },
        "links": run.links,
        "conservation_violations": run.conservation_violations(),
    });
    let mut s = serde_json::to_string_pretty(&v).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes all per-run files into `dir`; returns the paths written.
pub fn write_run(dir: &Path, run: &RunResult, key_rate: Option<f64>) -> Result<Vec<PathBuf>, OutputError> {
    let mut written = vec![
        write(dir.join("metrics.csv"), &run_metrics_csv(run, key_rate))?,
        write(dir.join("nodes.csv"), &nodes_csv(run))?,
        write(dir.join("links.csv"), &links_csv(run))?,
        write(dir.join("sessions.csv"), &sessions_csv(run))?,
        write(dir.join("summary.json"), &summary_json(run, key_rate))?,
    ];
    if let Some(t) = &run.traces {
        let mut q = String::from("time_s,node,held,held_cm,stored_keys\n");
        for s in &t.queue {
            let _ = writeln!(q, "{:.9},{},{},{},{}", s.at.as_secs_f64(), s.node, s.held, s.held_cm, s.stored_keys);
        }
        written.push(write(dir.join("trace_kms.csv"), &q)?);
        let mut g = String::from("time_s,link,bits,keys\n");
        for (l, s) in &t.generation {
            let _ = writeln!(g, "{:.9},{},{:.3},{}", s.at.as_secs_f64(), l.0, s.bits, s.keys);
        }
        written.push(write(dir.join("trace_qkd.csv"), &g)?);
        let mut c = String::from("kind,origin,destination,sent_s,delivered_s,hops,keys\n");
        for e in &t.cm_log {
            let _ = writeln!(
                c,
                "{},{},{},{:.9},{},{},{}",
                e.kind,
                e.origin,
                e.destination,
                e.sent_at.as_secs_f64(),
                e.delivered_at.map_or("NA".into(), |d| format!("{:.9}", d.as_secs_f64())),
                e.path.len() - 1,
                e.keys
            );
        }
        written.push(write(dir.join("trace_cm.csv"), &c)?);
    }
    Ok(written)
}

/// Writes the sweep table, the long-form figure table and one gnuplot file
/// per metric into `dir`.
pub fn write_sweep(dir: &Path, sweep: &SweepResult) -> Result<Vec<PathBuf>, OutputError> {
    let mut written = vec![
        write(dir.join("sweep.csv"), &sweep_csv(sweep))?,
        write(dir.join("figure_long.csv"), &figure_long_csv(sweep))?,
    ];
    for m in Metric::ALL {
        written.push(write(dir.join(format!("figure_{}.dat", m.name())), &gnuplot_block(sweep, m))?);
    }
    Ok(written)
}
