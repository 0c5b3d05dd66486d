//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 validation failure,
//! 3 runtime fault.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ScenarioConfig;
use crate::control::ScenarioLabel;
use crate::metrics::Metric;
use crate::output::{output_root, write_run, write_sweep};
use crate::sim::{run, SimError};
use crate::sweep::{run_sweep, SweepError};
use crate::validation::padua_checks;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "qkdnsim", version, about = "QKD network simulator with an SDN control plane")]
pub struct Cli {
    /// Output root; defaults to $QKDNSIM_OUT, then ./out
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Baseline,
    Padua,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario for every configured seed
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "config")]
        preset: Option<Preset>,
        #[arg(long)]
        scenario: Option<ScenarioLabel>,
        #[arg(long)]
        seed: Option<u64>,
        /// Key rate applied to every QKD link (keys/s)
        #[arg(long)]
        key_rate: Option<f64>,
        /// Also write per-node, per-link and control-message traces
        #[arg(long)]
        traces: bool,
    },
    /// Reproduce the Padua trial and compare with the reference counts
    Validate,
    /// Sweep key rates for scenarios A-D and write the figure data
    SweepFigure {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated key rates (keys/s)
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated scenario labels
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<ScenarioLabel>>,
    },
    /// Print the default configuration (or a preset) as TOML
    Defaults {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
}

fn load(config: Option<&Path>, preset: Option<Preset>) -> Result<ScenarioConfig, ExitCode> {
    match (config, preset) {
        (Some(p), _) => ScenarioConfig::load(p).map_err(|e| {
            eprintln!("error: {}: {e}", p.display());
            ExitCode::from(EXIT_CONFIG)
        }),
        (None, Some(Preset::Padua)) => Ok(ScenarioConfig::padua()),
        (None, _) => Ok(ScenarioConfig::default()),
    }
}

fn sim_fault(e: &SimError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        SimError::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_RUNTIME),
    }
}

pub fn execute(cli: Cli) -> ExitCode {
    let root = output_root(cli.out.as_deref());
    match cli.command {
        Command::Defaults { preset } => {
            let cfg = match preset {
                Some(Preset::Padua) => ScenarioConfig::padua(),
                _ => ScenarioConfig::default(),
            };
            print!("{}", cfg.to_toml_string());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            preset,
            scenario,
            seed,
            key_rate,
            traces,
        } => {
            let mut cfg = match load(config.as_deref(), preset) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = scenario {
                cfg.run.scenario = s;
            }
            if let Some(s) = seed {
                cfg.run.seeds = vec![s];
            }
            if key_rate.is_some() {
                cfg.run.key_rate_kps = key_rate;
            }
            cfg.run.traces |= traces;
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            for &seed in &cfg.run.seeds {
                let rc = match cfg.resolve(cfg.run.scenario, seed, cfg.run.key_rate_kps) {
                    Ok(rc) => rc,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                };
                let r = match run(rc) {
                    Ok(r) => r,
                    Err(e) => return sim_fault(&e),
                };
                let dir = root.join(format!("run_{}_seed{seed}", cfg.run.scenario));
                if let Err(e) = write_run(&dir, &r, cfg.run.key_rate_kps) {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
                let m = &r.metrics;
                println!(
                    "scenario {} seed {seed}: setup {:.3} s, tx {} rx {}, T_msg_ne {} ms, T_key {} ms, T_msg_km {} ms, N_msg_km {} -> {}",
                    r.label,
                    r.setup_complete.as_secs_f64(),
                    r.tx(),
                    r.rx(),
                    fmt(m.t_msg_ne_ms),
                    fmt(m.t_key_ms),
                    fmt(m.t_msg_km_ms),
                    fmt(m.n_msg_km),
                    dir.display()
                );
                let v = r.conservation_violations();
                if !v.is_empty() {
                    for line in v {
                        eprintln!("conservation: {line}");
                    }
                    return ExitCode::from(EXIT_RUNTIME);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Validate => {
            let cfg = ScenarioConfig::padua();
            let rc = match cfg.resolve(cfg.run.scenario, cfg.run.seeds[0], None) {
                Ok(rc) => rc,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let r = match run(rc) {
                Ok(r) => r,
                Err(e) => return sim_fault(&e),
            };
            if let Err(e) = write_run(&root.join("validate"), &r, None) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            let checks = padua_checks(&r);
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
        Command::SweepFigure {
            config,
            rates,
            seeds,
            scenarios,
        } => {
            let mut cfg = match load(config.as_deref(), None) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(r) = rates {
                cfg.sweep.key_rates = r;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            if let Some(s) = scenarios {
                cfg.sweep.scenarios = s;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            let sweep = match run_sweep(&cfg, |_, _| {}) {
                Ok(s) => s,
                Err(SweepError::Config(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
                Err(SweepError::Run { source, .. }) => return sim_fault(&source),
            };
            let dir = root.join("sweep");
            match write_sweep(&dir, &sweep) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            }
            for label in &cfg.sweep.scenarios {
                if let Some(c) = sweep.cutoff(*label, Metric::TMsgNe, cfg.sweep.cutoff_factor) {
                    println!(
                        "cut-off {label}: {} keys/s{}",
                        c.rate.map_or("none".into(), |r| format!("{r}")),
                        if c.low_confidence { " (low confidence)" } else { "" }
                    );
                }
            }
            ExitCode::SUCCESS
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.3}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["qkdnsim", "run", "--scenario", "D", "--key-rate", "50"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::Run {
                scenario: Some(ScenarioLabel::D),
                key_rate: Some(r),
                ..
            } if r == 50.0
        ));
        let cli = Cli::try_parse_from(["qkdnsim", "sweep-figure", "--rates", "10,25", "--seeds", "1"]).unwrap();
        assert!(matches!(cli.command, Command::SweepFigure { rates: Some(ref r), .. } if r.len() == 2));
        assert!(Cli::try_parse_from(["qkdnsim", "run", "--scenario", "Z"]).is_err());
    }

    #[test]
    fn missing_config_file_is_exit_one() {
        let cli = Cli::try_parse_from(["qkdnsim", "run", "--config", "/nonexistent/x.toml"]).unwrap();
        assert_eq!(execute(cli), ExitCode::from(EXIT_CONFIG));
    }
}
