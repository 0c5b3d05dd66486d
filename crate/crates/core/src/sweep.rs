//! Key-rate sweeps: every (scenario, rate, seed) combination is an
//! independent run, executed in parallel and reassembled in a fixed order.

use rayon::prelude::*;

use crate::config::{ConfigError, ScenarioConfig};
use crate::control::ScenarioLabel;
use crate::metrics::{RunMetrics, SweepPoint, SweepResult};
use crate::sim::{run, RunResult, SimError};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario {label}, {rate} keys/s, seed {seed}: {source}")]
    Run {
        label: ScenarioLabel,
        rate: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
}

/// Runs the sweep described by `cfg.sweep`. `inspect` sees every finished
/// run (for conservation checks or progress) before its details are dropped.
pub fn run_sweep<F>(cfg: &ScenarioConfig, inspect: F) -> Result<SweepResult, SweepError>
where
    F: Fn(&RunResult, f64) + Sync,
{
    let s = &cfg.sweep;
    let mut jobs = Vec::new();
    for &label in &s.scenarios {
        for &rate in &s.key_rates {
            for &seed in &s.seeds {
                jobs.push((label, rate, seed));
            }
        }
    }
    let configs = jobs
        .iter()
        .map(|&(label, rate, seed)| cfg.resolve(label, seed, Some(rate)))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<RunMetrics> = configs
        .into_par_iter()
        .zip(jobs.par_iter())
        .map(|(rc, &(label, rate, seed))| {
            let r = run(rc).map_err(|source| SweepError::Run {
                label,
                rate,
                seed,
                source,
            })?;
            inspect(&r, rate);
            Ok(r.metrics)
        })
        .collect::<Result<_, SweepError>>()?;

    let n_seeds = s.seeds.len();
    let points = jobs
        .chunks(n_seeds)
        .zip(results.chunks(n_seeds))
        .map(|(j, m)| SweepPoint {
            scenario: j[0].0,
            key_rate: j[0].1,
            seeds: s.seeds.clone(),
            per_seed: m.to_vec(),
            mean: RunMetrics::mean(m),
        })
        .collect();
    Ok(SweepResult { points })
}
