//! Turning Q-values into environment actions.

use crate::rng::RngStream;
use crate::spaces::{ActionSpace, ActionValue, AgentId, Bounds, SpaceDescriptor};
use crate::trainer::mlp::Mlp;
use crate::trainer::TrainError;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. One uniform draw decides whether to explore, so
/// the stream advances the same way whatever the outcome.
pub fn act(q: &[f64], epsilon: f64, rng: &mut RngStream) -> usize {
    if rng.unit() < epsilon {
        rng.below(q.len() as u64) as usize
    } else {
        argmax(q)
    }
}

/// Grid point `index` of `k` evenly spaced points spanning each dimension.
pub fn discretise_action(index: usize, bounds: &[Bounds], k: usize) -> Result<Vec<f64>, TrainError> {
    if k < 2 || index >= k {
        return Err(TrainError::IndexOutOfRange { index, k });
    }
    Ok(bounds
        .iter()
        .map(|b| b.low + index as f64 * (b.high - b.low) / (k - 1) as f64)
        .collect())
}

/// How a Q-network's output indices map onto an action space.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionMap {
    Discrete(u64),
    Grid { bounds: Vec<Bounds>, k: usize },
}

impl ActionMap {
    pub fn new(spaces: &SpaceDescriptor, k: usize) -> Self {
        match &spaces.action {
            ActionSpace::Discrete { n } => ActionMap::Discrete(*n),
            ActionSpace::Box { bounds } => ActionMap::Grid { bounds: bounds.clone(), k },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ActionMap::Discrete(n) => *n as usize,
            ActionMap::Grid { k, .. } => *k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action(&self, index: usize) -> Result<ActionValue, TrainError> {
        match self {
            ActionMap::Discrete(n) if (index as u64) < *n => Ok(ActionValue::Discrete(index as u64)),
            ActionMap::Discrete(n) => Err(TrainError::IndexOutOfRange { index, k: *n as usize }),
            ActionMap::Grid { bounds, k } => discretise_action(index, bounds, *k).map(ActionValue::Continuous),
        }
    }
}

/// Anything that picks actions for agents: a trained network, a random
/// baseline or a scripted rule.
pub trait Controller {
    fn choose(&mut self, agent: &AgentId, observation: &[f64]) -> Result<ActionValue, TrainError>;
}

/// Frozen network acting greedily.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    pub net: Mlp,
    pub map: ActionMap,
}

impl GreedyPolicy {
    pub fn index(&self, observation: &[f64]) -> usize {
        argmax(&self.net.forward(observation))
    }
}

impl Controller for GreedyPolicy {
    fn choose(&mut self, _agent: &AgentId, observation: &[f64]) -> Result<ActionValue, TrainError> {
        self.map.action(self.index(observation))
    }
}

/// Uniformly random over the action map's indices.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    pub map: ActionMap,
    pub rng: RngStream,
}

impl Controller for RandomPolicy {
    fn choose(&mut self, _agent: &AgentId, _observation: &[f64]) -> Result<ActionValue, TrainError> {
        let i = self.rng.below(self.map.len() as u64) as usize;
        self.map.action(i)
    }
}
