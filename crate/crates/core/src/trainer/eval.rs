use std::collections::BTreeMap;

use crate::config::EnvConfig;
use crate::env::Environment;
use crate::rng::derive_seed;
use crate::trainer::checkpoint::PolicyCheckpoint;
use crate::trainer::policy::Controller;
use crate::trainer::TrainError;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEpisode {
    pub seed: u64,
    pub reward: f64,
    pub len: u64,
    /// Scenario metrics at the end of the episode (for the dumbbell:
    /// normalised throughput, mean queuing delay, loss rate).
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EvalEpisode>,
}

impl EvalReport {
    pub fn mean_len(&self) -> Option<f64> {
        self.mean(|e| e.len as f64)
    }

    pub fn mean_reward(&self) -> Option<f64> {
        self.mean(|e| e.reward)
    }

    /// Mean of a scenario metric over the episodes that report it.
    pub fn mean_metric(&self, name: &str) -> Option<f64> {
        let values: Vec<f64> = self.episodes.iter().filter_map(|e| e.metrics.get(name).copied()).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    fn mean(&self, f: impl Fn(&EvalEpisode) -> f64) -> Option<f64> {
        (!self.episodes.is_empty()).then(|| self.episodes.iter().map(f).sum::<f64>() / self.episodes.len() as f64)
    }
}

/// Episode `i` runs with seed `derive_seed(seed, i)`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

/// Runs `episodes` full episodes under `controller`.
pub fn evaluate(
    env_config: &EnvConfig,
    controller: &mut dyn Controller,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport::default();
    if episodes == 0 {
        return Ok(report);
    }
    let mut env = Environment::initialise(env_config)?;
    for i in 0..episodes {
        let episode_seed = episode_seed(seed, i);
        let mut obs = env.reset(Some(episode_seed))?;
        let mut reward = 0.0;
        let mut len = 0;
        loop {
            let mut actions = BTreeMap::new();
            for (agent, o) in &obs {
                actions.insert(agent.clone(), controller.choose(agent, o)?);
            }
            let result = env.step(&actions)?;
            len += 1;
            reward += result.rewards.values().sum::<f64>();
            if result.episode_done {
                break;
            }
            obs = result.observations.into_iter().filter(|(a, _)| !result.dones[a]).collect();
        }
        report.episodes.push(EvalEpisode { seed: episode_seed, reward, len, metrics: env.metrics() });
    }
    Ok(report)
}

/// Greedy evaluation of a checkpoint; the environment must have the spaces
/// it was trained on.
pub fn evaluate_checkpoint(
    checkpoint: &PolicyCheckpoint,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let spaces = env_config.factory()?.spaces();
    checkpoint.check_spaces(&spaces)?;
    evaluate(env_config, &mut checkpoint.policy(), episodes, seed)
}
