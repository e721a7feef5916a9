//! Value types exchanged between agents and the learner: ids, actions,
//! observations and the spaces they live in.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unique name of an RL agent within one environment.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionValue {
    Discrete(u64),
    Continuous(Vec<f64>),
}

impl ActionValue {
    pub fn scalar(x: f64) -> Self {
        ActionValue::Continuous(vec![x])
    }
}

impl fmt::Display for ActionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionValue::Discrete(i) => write!(f, "{i}"),
            ActionValue::Continuous(v) => {
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

pub type Observation = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Bounds { low, high }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.low && x <= self.high
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: u64 },
    Box { bounds: Vec<Bounds> },
}

/// Shape of one agent's observations and actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    pub observation: Vec<Bounds>,
    pub action: ActionSpace,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("observation has {got} entries, expected {expected}")]
    ObservationLength { expected: usize, got: usize },
    #[error("observation entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("discrete action {index} outside 0..{n}")]
    DiscreteOutOfRange { index: u64, n: u64 },
    #[error("continuous action has {got} components, expected {expected}")]
    ActionLength { expected: usize, got: usize },
    #[error("action component {index} = {value} outside [{low}, {high}]")]
    ActionOutOfBounds { index: usize, value: f64, low: f64, high: f64 },
    #[error("{kind} action supplied to a {space} action space")]
    ActionKind { kind: &'static str, space: &'static str },
    #[error("bounds for dimension {index} are inverted ({low} > {high})")]
    InvertedBounds { index: usize, low: f64, high: f64 },
}

impl SpaceDescriptor {
    pub fn observation_len(&self) -> usize {
        self.observation.len()
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let boxes = match &self.action {
            ActionSpace::Box { bounds } => bounds.as_slice(),
            ActionSpace::Discrete { .. } => &[],
        };
        for (index, b) in self.observation.iter().chain(boxes).enumerate() {
            if b.low > b.high {
                return Err(SpaceError::InvertedBounds { index, low: b.low, high: b.high });
            }
        }
        Ok(())
    }

    pub fn check_observation(&self, obs: &[f64]) -> Result<(), SpaceError> {
        if obs.len() != self.observation.len() {
            return Err(SpaceError::ObservationLength {
                expected: self.observation.len(),
                got: obs.len(),
            });
        }
        if let Some(index) = obs.iter().position(|x| !x.is_finite()) {
            return Err(SpaceError::NonFinite { index });
        }
        Ok(())
    }

    pub fn check_action(&self, action: &ActionValue) -> Result<(), SpaceError> {
        match (&self.action, action) {
            (ActionSpace::Discrete { n }, ActionValue::Discrete(i)) => {
                if i >= n {
                    return Err(SpaceError::DiscreteOutOfRange { index: *i, n: *n });
                }
            }
            (ActionSpace::Box { bounds }, ActionValue::Continuous(v)) => {
                if v.len() != bounds.len() {
                    return Err(SpaceError::ActionLength { expected: bounds.len(), got: v.len() });
                }
                for (index, (x, b)) in v.iter().zip(bounds).enumerate() {
                    if !b.contains(*x) {
                        return Err(SpaceError::ActionOutOfBounds {
                            index,
                            value: *x,
                            low: b.low,
                            high: b.high,
                        });
                    }
                }
            }
            (ActionSpace::Discrete { .. }, ActionValue::Continuous(_)) => {
                return Err(SpaceError::ActionKind { kind: "continuous", space: "discrete" });
            }
            (ActionSpace::Box { .. }, ActionValue::Discrete(_)) => {
                return Err(SpaceError::ActionKind { kind: "discrete", space: "box" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc_like() -> SpaceDescriptor {
        SpaceDescriptor {
            observation: vec![Bounds::new(0.0, 1.0); 4],
            action: ActionSpace::Box { bounds: vec![Bounds::new(-2.0, 2.0)] },
        }
    }

    #[test]
    fn action_checks() {
        let s = cc_like();
        assert!(s.check_action(&ActionValue::scalar(2.0)).is_ok());
        assert!(matches!(
            s.check_action(&ActionValue::scalar(2.5)),
            Err(SpaceError::ActionOutOfBounds { .. })
        ));
        assert!(matches!(
            s.check_action(&ActionValue::Discrete(0)),
            Err(SpaceError::ActionKind { .. })
        ));
        let d = SpaceDescriptor { observation: vec![], action: ActionSpace::Discrete { n: 2 } };
        assert!(d.check_action(&ActionValue::Discrete(1)).is_ok());
        assert_eq!(
            d.check_action(&ActionValue::Discrete(2)),
            Err(SpaceError::DiscreteOutOfRange { index: 2, n: 2 })
        );
    }

    #[test]
    fn observation_checks() {
        let s = cc_like();
        assert!(s.check_observation(&[0.0, 0.1, 0.2, 0.3]).is_ok());
        assert!(s.check_observation(&[0.0]).is_err());
        assert_eq!(
            s.check_observation(&[0.0, f64::NAN, 0.0, 0.0]),
            Err(SpaceError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn inverted_bounds_rejected() {
        let s = SpaceDescriptor {
            observation: vec![Bounds::new(1.0, 0.0)],
            action: ActionSpace::Discrete { n: 2 },
        };
        assert!(matches!(s.validate(), Err(SpaceError::InvertedBounds { index: 0, .. })));
    }

    #[test]
    fn action_json_is_untagged() {
        let d: ActionValue = serde_json::from_str("3").unwrap();
        assert_eq!(d, ActionValue::Discrete(3));
        let c: ActionValue = serde_json::from_str("[0.5]").unwrap();
        assert_eq!(c, ActionValue::scalar(0.5));
    }
}
