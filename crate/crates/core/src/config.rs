//! Scenario configuration files (TOML). Every field has a default, so an
//! empty file describes the baseline 20-node study.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{plan_sessions, NeParams, TrafficPattern};
use crate::channel::ChannelParams;
use crate::control::{ControlParams, ScenarioLabel};
use crate::kernel::SimTime;
use crate::km::KmParams;
use crate::quantum::QkdParams;
use crate::sim::{RunConfig, StopAt};
use crate::topology::{attach_controller, generate_internet_like, padua_topology, NodeId, TopologySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenario: ScenarioLabel,
    pub seeds: Vec<u64>,
    /// Overrides every QKD link rate (keys/s).
    pub key_rate_kps: Option<f64>,
    pub total_time_s: f64,
    /// When set, the run lasts this long after setup instead of `total_time_s`.
    pub effective_time_s: Option<f64>,
    pub traces: bool,
    pub trace_sample_s: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            scenario: ScenarioLabel::A,
            seeds: vec![42],
            key_rate_kps: None,
            total_time_s: 400.0,
            effective_time_s: None,
            traces: false,
            trace_sample_s: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    #[default]
    Generated,
    Padua,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateOverride {
    pub a: u32,
    pub b: u32,
    pub key_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub source: TopologySource,
    pub nodes: usize,
    pub seed: u64,
    pub file: Option<PathBuf>,
    /// Node the gateway KMS attaches to; defaults to the highest node id.
    pub gateway_at: Option<u32>,
    pub rate_overrides: Vec<RateOverride>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            source: TopologySource::Generated,
            nodes: 20,
            seed: 42,
            file: None,
            gateway_at: None,
            rate_overrides: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub pattern: TrafficPattern,
    /// `[source, destination]` pairs for the explicit pattern.
    pub sessions: Vec<[u32; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub scenarios: Vec<ScenarioLabel>,
    pub key_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cutoff_factor: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            scenarios: ScenarioLabel::ALL.to_vec(),
            key_rates: vec![10.0, 25.0, 50.0, 100.0, 200.0, 340.0, 500.0],
            seeds: vec![42, 43, 44],
            cutoff_factor: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub topology: TopologySection,
    pub traffic: TrafficSection,
    pub qkd: QkdParams,
    pub kms: KmParams,
    pub ne: NeParams,
    pub channel: ChannelParams,
    pub control: ControlParams,
    pub sweep: SweepSection,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // a relative topology file is relative to the config file
        if let (Some(f), Some(dir)) = (cfg.topology.file.as_mut(), path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// The field-trial validation setup: the four-node Padua path with one
    /// session from node 1 to node 6, judged over 115 s after setup. Link
    /// rates are calibrated so each link's expected key count over the window
    /// equals the reference total.
    pub fn padua() -> Self {
        let window = 115.0;
        let rate = |a, b, total: f64| RateOverride {
            a,
            b,
            key_rate: total / window,
        };
        ScenarioConfig {
            run: RunSection {
                scenario: ScenarioLabel::B,
                effective_time_s: Some(window),
                ..RunSection::default()
            },
            topology: TopologySection {
                source: TopologySource::Padua,
                gateway_at: Some(6),
                rate_overrides: vec![rate(1, 2, 5820.0), rate(2, 3, 5820.0), rate(3, 6, 39023.0)],
                ..TopologySection::default()
            },
            traffic: TrafficSection {
                pattern: TrafficPattern::Explicit,
                sessions: vec![[1, 6]],
            },
            ne: NeParams {
                phase_spread_s: 0.0,
                ..NeParams::default()
            },
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = ConfigError::Invalid;
        self.qkd.validate().map_err(bad)?;
        self.kms.validate().map_err(bad)?;
        self.ne.validate().map_err(bad)?;
        self.channel.validate().map_err(bad)?;
        self.control.validate().map_err(bad)?;
        let r = &self.run;
        if r.seeds.is_empty() {
            return Err(bad("run.seeds must not be empty".into()));
        }
        if !(r.total_time_s > 0.0) || !r.total_time_s.is_finite() {
            return Err(bad("run.total_time_s must be positive".into()));
        }
        if let Some(e) = r.effective_time_s {
            if !(e > 0.0) || !e.is_finite() {
                return Err(bad("run.effective_time_s must be positive".into()));
            }
        }
        if let Some(k) = r.key_rate_kps {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(bad("run.key_rate_kps must be non-negative".into()));
            }
        }
        if !(r.trace_sample_s > 0.0) {
            return Err(bad("run.trace_sample_s must be positive".into()));
        }
        if self.topology.source == TopologySource::File && self.topology.file.is_none() {
            return Err(bad("topology.source = \"file\" needs topology.file".into()));
        }
        if self.topology.source == TopologySource::Generated && self.topology.nodes < 3 {
            return Err(bad("topology.nodes must be at least 3".into()));
        }
        if self.traffic.pattern == TrafficPattern::Explicit && self.traffic.sessions.is_empty() {
            return Err(bad("traffic.pattern = \"explicit\" needs traffic.sessions".into()));
        }
        for o in &self.topology.rate_overrides {
            if !(o.key_rate >= 0.0) || !o.key_rate.is_finite() {
                return Err(bad(format!("rate override {}-{} must be non-negative", o.a, o.b)));
            }
        }
        let s = &self.sweep;
        if s.key_rates.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(bad("sweep.key_rates must be non-negative".into()));
        }
        if !(s.cutoff_factor > 1.0) {
            return Err(bad("sweep.cutoff_factor must exceed 1".into()));
        }
        Ok(())
    }

    /// The key-management graph before the controller is attached.
    pub fn base_topology(&self) -> Result<TopologySpec, ConfigError> {
        let t = &self.topology;
        match t.source {
            TopologySource::Generated => {
                generate_internet_like(t.nodes, t.seed).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            TopologySource::Padua => Ok(padua_topology()),
            TopologySource::File => {
                let path = t.file.as_ref().ok_or_else(|| ConfigError::Invalid("topology.file is missing".into()))?;
                TopologySpec::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    /// Builds the inputs of one run.
    pub fn resolve(&self, label: ScenarioLabel, seed: u64, key_rate: Option<f64>) -> Result<RunConfig, ConfigError> {
        let mut topo = self.base_topology()?;
        if let Some(r) = key_rate.or(self.run.key_rate_kps) {
            topo.set_key_rate(r);
        }
        for o in &self.topology.rate_overrides {
            let (a, b) = (NodeId(o.a), NodeId(o.b));
            let link = topo
                .links
                .iter_mut()
                .find(|l| l.touches(a) && l.touches(b))
                .ok_or_else(|| ConfigError::Invalid(format!("rate override for unknown link {a}-{b}")))?;
            link.key_rate = o.key_rate;
        }
        let access = topo.access_nodes();
        let gateway_at = self
            .topology
            .gateway_at
            .map(NodeId)
            .or_else(|| topo.km_nodes().last().copied())
            .ok_or_else(|| ConfigError::Invalid("topology has no nodes".into()))?;
        let full = attach_controller(&topo, label.parts().0, gateway_at).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let explicit: Vec<(NodeId, NodeId)> = self
            .traffic
            .sessions
            .iter()
            .map(|[a, b]| (NodeId(*a), NodeId(*b)))
            .collect();
        let sessions = plan_sessions(self.traffic.pattern, &access, &explicit, seed);
        let stop = match self.run.effective_time_s {
            Some(e) => StopAt::AfterSetup(SimTime::from_secs_f64(e)),
            None => StopAt::Total(SimTime::from_secs_f64(self.run.total_time_s)),
        };
        Ok(RunConfig {
            label,
            seed,
            topology: full,
            sessions,
            qkd: self.qkd.clone(),
            kms: self.kms.clone(),
            ne: self.ne.clone(),
            channel: self.channel.clone(),
            control: self.control.clone(),
            stop,
            trace_sample: SimTime::from_secs_f64(self.run.trace_sample_s),
            traces: self.run.traces,
        })
    }
}
