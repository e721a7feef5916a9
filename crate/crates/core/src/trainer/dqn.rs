//! The DQN update: squared TD error against a periodically copied target
//! network.

use crate::rng::RngStream;
use crate::trainer::mlp::{Mlp, Optimiser, Workspace};
use crate::trainer::replay::{ReplayBuffer, Transition};
use crate::trainer::{TrainError, TrainerConfig};

/// `r + gamma * max_a Q_target(s', a)`, without the bootstrap when done.
pub fn td_target(reward: f64, done: bool, gamma: f64, next_q: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Learner {
    online: Mlp,
    target: Mlp,
    optimiser: Optimiser,
    gamma: f64,
    batch: usize,
    target_sync: u64,
    grad_clip: Option<f64>,
    updates: u64,
    ws: Workspace,
    ws_target: Workspace,
    grad: Vec<f64>,
    xs: Vec<f64>,
    next_xs: Vec<f64>,
    rng: RngStream,
}

impl Learner {
    pub fn new(online: Mlp, config: &TrainerConfig, rng: RngStream) -> Self {
        let n = online.params().len();
        Learner {
            target: online.clone(),
            optimiser: Optimiser::new(config.optimiser, config.learning_rate, config.momentum, n),
            online,
            gamma: config.gamma,
            batch: config.batch_size,
            target_sync: config.target_sync,
            grad_clip: config.grad_clip,
            updates: 0,
            ws: Workspace::default(),
            ws_target: Workspace::default(),
            grad: vec![0.0; n],
            xs: Vec::new(),
            next_xs: Vec::new(),
            rng,
        }
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step on a uniformly sampled batch. Returns the batch's
    /// mean squared TD error before the step.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<f64, TrainError> {
        let batch: Vec<Transition> = buffer.sample(self.batch, &mut self.rng).into_iter().cloned().collect();
        self.train_on(&batch)
    }

    /// One gradient step on the given transitions.
    pub fn train_on(&mut self, batch: &[Transition]) -> Result<f64, TrainError> {
        let n = batch.len();
        let outputs = self.online.outputs();
        self.xs.clear();
        self.next_xs.clear();
        for t in batch {
            self.xs.extend_from_slice(&t.observation);
            self.next_xs.extend_from_slice(&t.next_observation);
        }
        let next_q = self.target.forward_batch(&self.next_xs, n, &mut self.ws_target);
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| td_target(t.reward, t.done, self.gamma, &next_q[i * outputs..(i + 1) * outputs]))
            .collect();
        let q = self.online.forward_batch(&self.xs, n, &mut self.ws);
        let mut d_out = vec![0.0; n * outputs];
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let err = q[i * outputs + t.action] - targets[i];
            loss += err * err;
            d_out[i * outputs + t.action] = 2.0 * err / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { update: self.updates, loss });
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.online.backward(&mut self.ws, n, &d_out, &mut self.grad);
        if let Some(limit) = self.grad_clip {
            let norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                let scale = limit / norm;
                self.grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        self.optimiser.step(self.online.params_mut(), &self.grad);
        if self.online.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::NonFiniteLoss { update: self.updates, loss: f64::NAN });
        }
        self.updates += 1;
        if self.updates % self.target_sync == 0 {
            self.target.set_params(self.online.params());
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::AgentId;

    fn transition(obs: f64, action: usize, reward: f64, done: bool) -> Transition {
        Transition {
            agent: AgentId::new("a"),
            observation: vec![obs, 1.0],
            action,
            reward,
            next_observation: vec![-obs, 0.5],
            done,
        }
    }

    fn learner(gamma: f64) -> Learner {
        learner_with(TrainerConfig { gamma, batch_size: 8, target_sync: 50, ..Default::default() })
    }

    fn learner_with(config: TrainerConfig) -> Learner {
        let net = Mlp::new(&[2, 16, 16, 3], &mut RngStream::new(4, "net"));
        Learner::new(net, &config, RngStream::new(4, "batch"))
    }

    #[test]
    fn done_targets_are_the_reward() {
        assert_eq!(td_target(0.75, true, 0.99, &[100.0, 200.0]), 0.75);
        assert_eq!(td_target(0.5, false, 0.5, &[1.0, 3.0, 2.0]), 2.0);
    }

    #[test]
    fn zero_rewards_collapse_q_to_zero() {
        let mut l = learner_with(TrainerConfig {
            gamma: 0.9,
            batch_size: 16,
            target_sync: 50,
            learning_rate: 1e-2,
            ..Default::default()
        });
        // Every (state, action) pair appears and successors stay inside the
        // state set, so zero is the only fixed point.
        let state = |k: usize| vec![k as f64 / 8.0, 1.0];
        let mut buf = ReplayBuffer::new(24);
        for k in 0..8 {
            for action in 0..3 {
                buf.push(Transition {
                    agent: AgentId::new("a"),
                    observation: state(k),
                    action,
                    reward: 0.0,
                    next_observation: state((k * 3 + action) % 8),
                    done: k == 7,
                });
            }
        }
        let max_q = |l: &Learner| {
            buf.iter().flat_map(|t| l.online().forward(&t.observation)).fold(0.0f64, |m, q| m.max(q.abs()))
        };
        let before = max_q(&l);
        let mut last = f64::INFINITY;
        for _ in 0..10_000 {
            last = l.train_step(&buf).unwrap();
        }
        assert!(last < 1e-4, "final loss {last}");
        assert!(max_q(&l) < before * 0.1, "max |Q| went {before} -> {}", max_q(&l));
    }

    #[test]
    fn terminal_batch_regresses_onto_rewards() {
        // With every transition terminal the target network drops out and
        // the problem is plain regression.
        let mut l = learner(0.99);
        let batch: Vec<Transition> = (0..8).map(|i| transition(i as f64 / 8.0, 1, i as f64 / 4.0, true)).collect();
        for _ in 0..4_000 {
            l.train_on(&batch).unwrap();
        }
        for t in &batch {
            let q = l.online().forward(&t.observation)[1];
            assert!((q - t.reward).abs() < 0.05, "{q} vs {}", t.reward);
        }
    }

    #[test]
    fn target_network_copies_on_schedule() {
        let mut l = learner(0.5);
        let batch = vec![transition(0.3, 0, 1.0, false)];
        for _ in 0..49 {
            l.train_on(&batch).unwrap();
        }
        assert_ne!(l.online().params(), l.target().params());
        l.train_on(&batch).unwrap();
        assert_eq!(l.online().params(), l.target().params());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut l = learner(0.5);
        let batch = vec![transition(0.3, 0, f64::INFINITY, true)];
        assert!(matches!(l.train_on(&batch), Err(TrainError::NonFiniteLoss { update: 0, .. })));
    }
}
