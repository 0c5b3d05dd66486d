//! Discrete-event simulator for trusted-node QKD networks with an SDN
//! control plane.
//!
//! Layers, bottom up: [`kernel`] (event engine), [`quantum`] (QKD key
//! streams), [`km`] (key management and relaying), [`channel`] (classical
//! links), [`control`] (controller and routing), [`app`] (network
//! encryptors). [`sim`] wires them into one run; [`sweep`] repeats runs over
//! key rates and seeds; [`metrics`] and [`output`] summarise and store the
//! results.
// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod cli;
pub mod channel;
pub mod config;
pub mod control;
pub mod kernel;
pub mod km;
pub mod metrics;
pub mod output;
pub mod quantum;
pub mod sim;
pub mod sweep;
pub mod topology;
pub mod validation;

pub use config::{ConfigError, ScenarioConfig};
pub use sim::{run, RunConfig, RunResult, SimError};
