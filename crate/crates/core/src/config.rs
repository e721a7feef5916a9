//! Scenario configuration documents (JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartpole::{CartPoleConfig, CartPoleFactory};
use crate::cc::CcConfig;
use crate::env::ScenarioFactory;
use crate::netsim::DumbbellFactory;
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{field}: {message}")]
    Parse { field: String, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }

    /// The dotted path of the offending field, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Io { .. } => None,
            ConfigError::Parse { field, .. } | ConfigError::Invalid { field, .. } => Some(field),
        }
    }
}

/// A fixed value or a `{low, high}` range sampled uniformly per episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Range { low: f64, high: f64 },
}

impl Param {
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Param::Fixed(x) => x,
            Param::Range { low, high } => rng.uniform(low, high),
        }
    }

    pub fn midpoint(&self) -> f64 {
        match *self {
            Param::Fixed(x) => x,
            Param::Range { low, high } => 0.5 * (low + high),
        }
    }

    fn check(&self, field: &str, min: f64, min_inclusive: bool) -> Result<(), ConfigError> {
        let ok = |x: f64| x.is_finite() && if min_inclusive { x >= min } else { x > min };
        let rel = if min_inclusive { ">=" } else { ">" };
        match *self {
            Param::Fixed(x) if !ok(x) => {
                Err(ConfigError::invalid(field, format!("must be finite and {rel} {min}, got {x}")))
            }
            Param::Range { low, high } if !ok(low) || !ok(high) => Err(ConfigError::invalid(
                field,
                format!("range bounds must be finite and {rel} {min}, got [{low}, {high}]"),
            )),
            Param::Range { low, high } if low > high => {
                Err(ConfigError::invalid(field, format!("range low {low} exceeds high {high}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Fixed(x) => write!(f, "{x}"),
            Param::Range { low, high } => write!(f, "[{low}, {high}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unbounded {
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlowSize {
    Packets(u64),
    Unbounded(Unbounded),
}

impl FlowSize {
    pub fn packets(self) -> Option<u64> {
        match self {
            FlowSize::Packets(n) => Some(n),
            FlowSize::Unbounded(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "unbounded")]
    pub size_pkts: FlowSize,
}

fn unbounded() -> FlowSize {
    FlowSize::Unbounded(Unbounded::Unbounded)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumbbellConfig {
    pub bandwidth_mbps: Param,
    /// Two-way propagation delay of the bottleneck path.
    pub rtt_ms: Param,
    pub buffer_pkts: Param,
    pub flows: Vec<FlowSpec>,
    pub access_bandwidth_mbps: f64,
    /// Period of the per-flow time series; no series when absent.
    pub sample_interval_ms: Option<f64>,
}

impl Default for DumbbellConfig {
    fn default() -> Self {
        DumbbellConfig {
            bandwidth_mbps: Param::Fixed(96.0),
            rtt_ms: Param::Fixed(40.0),
            buffer_pkts: Param::Fixed(440.0),
            flows: vec![FlowSpec { start_s: 0.0, size_pkts: unbounded() }],
            access_bandwidth_mbps: 1000.0,
            sample_interval_ms: None,
        }
    }
}

impl DumbbellConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bandwidth_mbps.check("dumbbell.bandwidth_mbps", 0.0, false)?;
        self.rtt_ms.check("dumbbell.rtt_ms", 0.0, true)?;
        self.buffer_pkts.check("dumbbell.buffer_pkts", 1.0, true)?;
        if self.flows.is_empty() {
            return Err(ConfigError::invalid("dumbbell.flows", "at least one flow is required"));
        }
        for (i, f) in self.flows.iter().enumerate() {
            if !(f.start_s.is_finite() && f.start_s >= 0.0) {
                return Err(ConfigError::invalid(
                    format!("dumbbell.flows[{i}].start_s"),
                    format!("must be finite and >= 0, got {}", f.start_s),
                ));
            }
            if f.size_pkts == FlowSize::Packets(0) {
                return Err(ConfigError::invalid(
                    format!("dumbbell.flows[{i}].size_pkts"),
                    "must be positive or \"unbounded\"",
                ));
            }
        }
        if !(self.access_bandwidth_mbps.is_finite() && self.access_bandwidth_mbps > 0.0) {
            return Err(ConfigError::invalid("dumbbell.access_bandwidth_mbps", "must be positive"));
        }
        if let Some(ms) = self.sample_interval_ms {
            if !(ms.is_finite() && ms > 0.0) {
                return Err(ConfigError::invalid("dumbbell.sample_interval_ms", "must be positive"));
            }
        }
        Ok(())
    }
}

impl CcConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.loss_done_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError::invalid("agent.loss_done_threshold", "must lie in (0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::invalid("agent.max_steps", "must be at least 1"));
        }
        if !(self.ssthresh_pkts >= 1.0) {
            return Err(ConfigError::invalid("agent.ssthresh_pkts", "must be at least 1"));
        }
        if !(self.cwnd_cap_pkts >= 2.0 && self.cwnd_cap_pkts.is_finite()) {
            return Err(ConfigError::invalid("agent.cwnd_cap_pkts", "must be finite and at least 2"));
        }
        if !(self.step_rtt_multiplier > 0.0 && self.step_rtt_multiplier.is_finite()) {
            return Err(ConfigError::invalid("agent.step_rtt_multiplier", "must be positive"));
        }
        if !(self.initial_cwnd_pkts >= 1.0 && self.initial_cwnd_pkts <= self.cwnd_cap_pkts) {
            return Err(ConfigError::invalid(
                "agent.initial_cwnd_pkts",
                "must lie between 1 and cwnd_cap_pkts",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Dumbbell,
    Cartpole,
}

/// Top-level environment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    /// Optional cap on `step()` calls per episode, on top of any
    /// scenario-level limit.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub dumbbell: DumbbellConfig,
    #[serde(default)]
    pub agent: CcConfig,
    #[serde(default)]
    pub cartpole: CartPoleConfig,
    #[serde(default)]
    pub event_trace_path: Option<PathBuf>,
}

impl EnvConfig {
    pub fn dumbbell(dumbbell: DumbbellConfig) -> Self {
        EnvConfig {
            scenario: ScenarioKind::Dumbbell,
            seed: 0,
            max_steps: None,
            dumbbell,
            agent: CcConfig::default(),
            cartpole: CartPoleConfig::default(),
            event_trace_path: None,
        }
    }

    pub fn cartpole() -> Self {
        EnvConfig { scenario: ScenarioKind::Cartpole, ..Self::dumbbell(DumbbellConfig::default()) }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: EnvConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse {
                field: if field == "." { "<root>".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        Self::from_json(&value.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == Some(0) {
            return Err(ConfigError::invalid("max_steps", "must be at least 1"));
        }
        match self.scenario {
            ScenarioKind::Dumbbell => {
                self.dumbbell.validate()?;
                self.agent.validate()
            }
            ScenarioKind::Cartpole => self.cartpole.validate(),
        }
    }

    pub fn factory(&self) -> Result<Arc<dyn ScenarioFactory>, ConfigError> {
        self.validate()?;
        Ok(match self.scenario {
            ScenarioKind::Dumbbell => {
                Arc::new(DumbbellFactory::new(self.dumbbell.clone(), self.agent.clone()))
            }
            ScenarioKind::Cartpole => Arc::new(CartPoleFactory::new(self.cartpole.clone())),
        })
    }
}
