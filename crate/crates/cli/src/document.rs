//! The experiment document: an environment configuration plus optional
//! `trainer`, `eval`, `bench` and `replay` sections, all in one JSON file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stepnet::config::{ConfigError, EnvConfig};
use stepnet::netsim::FairShareRamp;
use stepnet::trainer::TrainerConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Bandwidth,
    Rtt,
    Buffer,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Bandwidth => "bandwidth",
            Dimension::Rtt => "rtt",
            Dimension::Buffer => "buffer",
        }
    }

    /// The grid swept when the document names no sweeps.
    fn default_grid(self) -> Vec<f64> {
        match self {
            Dimension::Bandwidth => (1..=8).map(|i| 32.0 * i as f64).collect(),
            Dimension::Rtt => (1..=8).map(|i| 10.0 * i as f64).collect(),
            Dimension::Buffer => vec![40.0, 80.0, 160.0, 320.0, 440.0, 640.0, 800.0, 1200.0],
        }
    }
}

/// Values of the dimensions a sweep holds still.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fixed {
    pub bandwidth_mbps: f64,
    pub rtt_ms: f64,
    pub buffer_pkts: f64,
}

impl Default for Fixed {
    fn default() -> Self {
        Fixed { bandwidth_mbps: 96.0, rtt_ms: 40.0, buffer_pkts: 440.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub dimension: Dimension,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub fixed: Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Relative paths resolve against the document's directory.
    pub checkpoint: Option<PathBuf>,
    pub episodes: usize,
    pub sweeps: Vec<Sweep>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let sweeps = [Dimension::Bandwidth, Dimension::Rtt, Dimension::Buffer]
            .into_iter()
            .map(|dimension| Sweep { dimension, grid: dimension.default_grid(), fixed: Fixed::default() })
            .collect();
        EvalSection { checkpoint: None, episodes: 10, sweeps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub workers: Vec<usize>,
    pub seeds: Vec<u64>,
    pub steps: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { workers: vec![1, 2, 4], seeds: vec![0, 1, 2], steps: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSource {
    /// JSON lines, one `{agent: action}` object per step.
    Script(PathBuf),
    Ramp(FairShareRamp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub actions: ActionSource,
    /// Also write every dispatched kernel event.
    pub events: bool,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection { actions: ActionSource::Ramp(FairShareRamp::default()), events: false }
    }
}

#[derive(Clone, Debug)]
pub struct Document {
    pub path: PathBuf,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub replay: ReplaySection,
}

fn section<T: DeserializeOwned + Default>(
    root: &mut serde_json::Map<String, serde_json::Value>,
    name: &str,
) -> Result<T, ConfigError> {
    let Some(value) = root.remove(name) else {
        return Ok(T::default());
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse {
            field: if path == "." { name.to_owned() } else { format!("{name}.{path}") },
            message: e.into_inner().to_string(),
        }
    })
}

impl Document {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::MissingConfig(path.to_owned()))
            }
            Err(source) => return Err(ConfigError::Io { path: path.to_owned(), source }.into()),
        };
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::Parse { field: "<root>".into(), message: e.to_string() })?;
        let serde_json::Value::Object(mut root) = value else {
            return Err(ConfigError::invalid("<root>", "expected a JSON object").into());
        };
        let trainer: TrainerConfig = section(&mut root, "trainer")?;
        let eval: EvalSection = section(&mut root, "eval")?;
        let bench: BenchSection = section(&mut root, "bench")?;
        let replay: ReplaySection = section(&mut root, "replay")?;
        let env = EnvConfig::from_value(serde_json::Value::Object(root))?;
        let doc = Document { path: path.to_owned(), env, trainer, eval, bench, replay };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.trainer.validate()?;
        if self.eval.episodes == 0 {
            return Err(ConfigError::invalid("eval.episodes", "must be at least 1"));
        }
        if self.eval.sweeps.is_empty() {
            return Err(ConfigError::invalid("eval.sweeps", "at least one sweep is required"));
        }
        for (i, s) in self.eval.sweeps.iter().enumerate() {
            let field = format!("eval.sweeps[{i}].grid");
            if s.grid.is_empty() {
                return Err(ConfigError::invalid(field, "grid is empty"));
            }
            if s.grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(ConfigError::invalid(field, "grid values must be positive"));
            }
            if s.grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError::invalid(field, "grid must be strictly increasing"));
            }
            let f = s.fixed;
            if ![f.bandwidth_mbps, f.rtt_ms, f.buffer_pkts].iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(ConfigError::invalid(format!("eval.sweeps[{i}].fixed"), "values must be positive"));
            }
        }
        if self.bench.workers.is_empty() || self.bench.workers.contains(&0) {
            return Err(ConfigError::invalid("bench.workers", "worker counts must be at least 1"));
        }
        if self.bench.seeds.is_empty() {
            return Err(ConfigError::invalid("bench.seeds", "at least one seed is required"));
        }
        if self.bench.steps == 0 {
            return Err(ConfigError::invalid("bench.steps", "the step budget must be positive"));
        }
        if let ActionSource::Ramp(r) = self.replay.actions {
            if !(r.max_alpha > 0.0 && r.max_alpha <= 2.0) {
                return Err(ConfigError::invalid("replay.actions.ramp.max_alpha", "must lie in (0, 2]"));
            }
            if !(r.headroom.is_finite() && r.headroom > 0.0) {
                return Err(ConfigError::invalid("replay.actions.ramp.headroom", "must be positive"));
            }
        }
        Ok(())
    }

    /// Resolves a path named inside the document.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Document, CliError> {
        Document::parse(text, Path::new("/tmp/x.json"))
    }

    #[test]
    fn sections_split_from_the_environment() {
        let d = parse(
            r#"{"scenario": "cartpole", "seed": 4,
                "trainer": {"total_steps": 10},
                "bench": {"workers": [2], "steps": 5}}"#,
        )
        .unwrap();
        assert_eq!(d.env.seed, 4);
        assert_eq!(d.trainer.total_steps, 10);
        assert_eq!(d.bench.workers, vec![2]);
        assert_eq!(d.eval.sweeps.len(), 3);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let e = parse(r#"{"scenario": "dumbbell", "eval": {"sweeps": [{"dimension": "rtt", "grid": []}]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("eval.sweeps[0].grid"), "{e}");
    }

    #[test]
    fn zero_bench_budget_is_rejected() {
        let e = parse(r#"{"scenario": "cartpole", "bench": {"steps": 0}}"#).unwrap_err();
        assert!(e.to_string().contains("bench.steps"), "{e}");
    }

    #[test]
    fn section_errors_carry_their_path() {
        let e = parse(r#"{"scenario": "cartpole", "trainer": {"gama": 0.5}}"#).unwrap_err();
        assert!(e.to_string().contains("trainer.gama: unknown field"), "{e}");
    }

    #[test]
    fn script_paths_resolve_next_to_the_document() {
        let d = parse(r#"{"scenario": "cartpole", "replay": {"actions": {"script": "a.jsonl"}}}"#).unwrap();
        let ActionSource::Script(p) = &d.replay.actions else { panic!() };
        assert_eq!(d.resolve(p), Path::new("/tmp/a.jsonl"));
    }
}
