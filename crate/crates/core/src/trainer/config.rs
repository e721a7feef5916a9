use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::trainer::mlp::OptimiserKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimiser: OptimiserKind,
    /// Only used by SGD.
    pub momentum: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Gradient steps between target-network copies.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Transitions collected before the first gradient step.
    pub warmup_steps: usize,
    pub total_steps: u64,
    pub workers: usize,
    /// Grid size K for box action spaces.
    pub action_grid: usize,
    pub seed: u64,
    /// Gradient steps between parameter broadcasts to the workers.
    pub param_sync_interval: u64,
    pub queue_capacity: usize,
    /// Collected transitions per gradient step.
    pub train_every: u64,
    pub log_interval: u64,
    /// Collected transitions between greedy evaluations; 0 disables them.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Stop once a greedy evaluation reaches this mean episode length.
    pub solved_mean_len: Option<f64>,
    /// Return the network of the best greedy evaluation (by mean reward)
    /// instead of the last one. Needs `eval_interval > 0`.
    pub keep_best: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            learning_rate: 1e-3,
            optimiser: OptimiserKind::SgdMomentum,
            momentum: 0.9,
            grad_clip: Some(10.0),
            hidden: vec![64, 64],
            buffer_capacity: 100_000,
            batch_size: 64,
            target_sync: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            warmup_steps: 1_000,
            total_steps: 50_000,
            workers: 1,
            action_grid: 11,
            seed: 0,
            param_sync_interval: 500,
            queue_capacity: 1_024,
            train_every: 1,
            log_interval: 1_000,
            eval_interval: 0,
            eval_episodes: 10,
            solved_mean_len: None,
            keep_best: false,
        }
    }
}

impl TrainerConfig {
    /// Linear decay from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::invalid(format!("trainer.{field}"), reason))
            }
        };
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate",
            "must be positive",
        )?;
        check((0.0..1.0).contains(&self.momentum), "momentum", "must lie in [0, 1)")?;
        check(
            self.grad_clip.is_none_or(|c| c.is_finite() && c > 0.0),
            "grad_clip",
            "must be positive",
        )?;
        check(
            !self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0),
            "hidden",
            "needs at least one non-empty layer",
        )?;
        check(self.buffer_capacity > 0, "buffer_capacity", "must be at least 1")?;
        check(self.batch_size > 0, "batch_size", "must be at least 1")?;
        check(self.target_sync > 0, "target_sync", "must be at least 1")?;
        for (field, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            check((0.0..=1.0).contains(&e), field, "must lie in [0, 1]")?;
        }
        check(self.total_steps > 0, "total_steps", "must be at least 1")?;
        check(self.workers > 0, "workers", "must be at least 1")?;
        check(self.action_grid >= 2, "action_grid", "must be at least 2")?;
        check(self.param_sync_interval > 0, "param_sync_interval", "must be at least 1")?;
        check(self.queue_capacity > 0, "queue_capacity", "must be at least 1")?;
        check(self.train_every > 0, "train_every", "must be at least 1")?;
        check(self.log_interval > 0, "log_interval", "must be at least 1")?;
        check(!self.keep_best || self.eval_interval > 0, "keep_best", "needs periodic evaluations (eval_interval > 0)")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_decays_linearly_then_holds() {
        let c = TrainerConfig { epsilon_decay_steps: 100, ..Default::default() };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(50) - 0.525).abs() < 1e-12);
        assert_eq!(c.epsilon(100), 0.05);
        assert_eq!(c.epsilon(10_000), 0.05);
    }

    #[test]
    fn rejects_bad_values_by_field() {
        let bad = TrainerConfig { gamma: 1.5, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().field(), Some("trainer.gamma"));
        let bad = TrainerConfig { action_grid: 1, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().field(), Some("trainer.action_grid"));
        TrainerConfig::default().validate().unwrap();
    }
}
