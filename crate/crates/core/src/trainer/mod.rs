//! A self-contained parallel DQN trainer.
//!
//! Rollout workers ([`rollout`]) feed transitions into a replay buffer owned
//! by the learner, which takes gradient steps ([`dqn`]) and periodically
//! sends its parameters back to the workers. Box action spaces are handled
//! by discretising every dimension onto a K-point grid.

pub mod checkpoint;
pub mod config;
pub mod dqn;
pub mod eval;
pub mod mlp;
pub mod policy;
pub mod replay;
pub mod rollout;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, EnvConfig};
use crate::env::EnvError;
use crate::rng::{derive_seed, RngStream};

pub use checkpoint::PolicyCheckpoint;
pub use config::TrainerConfig;
pub use dqn::Learner;
pub use eval::{evaluate, evaluate_checkpoint, EvalEpisode, EvalReport};
pub use mlp::{Mlp, OptimiserKind};
pub use policy::{act, argmax, discretise_action, ActionMap, Controller, GreedyPolicy, RandomPolicy};
pub use replay::{ReplayBuffer, Transition};
pub use rollout::{collect, EpisodeRecord, Message};

use policy::ActionMap as Map;
use rollout::{Consumer, Flow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("loss became non-finite ({loss}) at gradient step {update}")]
    NonFiniteLoss { update: u64, loss: f64 },
    #[error("action index {index} outside a grid of {k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("corrupt checkpoint (version {}): {reason}", version.map_or("unknown".to_owned(), |v| v.to_string()))]
    CorruptCheckpoint { version: Option<u32>, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("worker {worker} kept failing; last error: {last}")]
    TooManyFaults { worker: usize, last: String },
    #[error("worker panicked: {0}")]
    WorkerPanic(String),
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub wall_ms: u128,
    pub steps: u64,
    pub episodes: u64,
    /// Over the last 100 finished episodes.
    pub mean_ep_reward: Option<f64>,
    pub mean_ep_len: Option<f64>,
    /// Mean loss of the gradient steps since the previous row.
    pub loss: Option<f64>,
    pub epsilon: f64,
}

pub const LOG_HEADER: &str = "wall_ms,steps,episodes,mean_ep_reward,mean_ep_len,loss,epsilon";

impl std::fmt::Display for LogRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.wall_ms,
            self.steps,
            self.episodes,
            opt(self.mean_ep_reward),
            opt(self.mean_ep_len),
            opt(self.loss),
            self.epsilon
        )
    }
}

/// An episode finished during training, stamped with the global step count
/// at which its last transition arrived.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainEpisode {
    pub step: u64,
    pub record: EpisodeRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub mean_len: f64,
    pub mean_reward: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PolicyCheckpoint,
    pub episodes: Vec<TrainEpisode>,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalPoint>,
    /// Step at which a greedy evaluation first met `solved_mean_len`.
    pub solved_at: Option<u64>,
    pub faults: u64,
    pub updates: u64,
}

const RECENT_EPISODES: usize = 100;
/// Keeps evaluation seeds apart from training seeds.
const EVAL_SALT: u64 = 0x6576_616c;

struct Trainer<'a> {
    config: &'a TrainerConfig,
    env_config: &'a EnvConfig,
    buffer: ReplayBuffer,
    learner: Learner,
    map: Map,
    steps: u64,
    episodes: Vec<TrainEpisode>,
    recent: VecDeque<(f64, u64)>,
    losses: (f64, u64),
    log: Vec<LogRow>,
    evals: Vec<EvalPoint>,
    best: Option<(f64, u64, Mlp)>,
    solved_at: Option<u64>,
    faults: u64,
    published: Option<Arc<Vec<f64>>>,
    started: Instant,
    on_log: &'a mut dyn FnMut(&LogRow),
}

impl Trainer<'_> {
    fn log_row(&mut self) {
        let n = self.recent.len();
        let row = LogRow {
            wall_ms: self.started.elapsed().as_millis(),
            steps: self.steps,
            episodes: self.episodes.len() as u64,
            mean_ep_reward: (n > 0).then(|| self.recent.iter().map(|r| r.0).sum::<f64>() / n as f64),
            mean_ep_len: (n > 0).then(|| self.recent.iter().map(|r| r.1 as f64).sum::<f64>() / n as f64),
            loss: (self.losses.1 > 0).then(|| self.losses.0 / self.losses.1 as f64),
            epsilon: self.config.epsilon(self.steps),
        };
        self.losses = (0.0, 0);
        (self.on_log)(&row);
        self.log.push(row);
    }

    fn evaluate(&mut self) -> Result<Flow, TrainError> {
        let mut policy = GreedyPolicy { net: self.learner.online().clone(), map: self.map.clone() };
        let seed = derive_seed(self.config.seed ^ EVAL_SALT, self.evals.len() as u64);
        let report = evaluate(self.env_config, &mut policy, self.config.eval_episodes, seed)?;
        let point = EvalPoint {
            step: self.steps,
            mean_len: report.mean_len().unwrap_or(0.0),
            mean_reward: report.mean_reward().unwrap_or(0.0),
        };
        log::info!(
            "greedy evaluation at step {}: mean length {:.1}, mean reward {:.3}",
            point.step,
            point.mean_len,
            point.mean_reward
        );
        if self.config.keep_best && self.best.as_ref().is_none_or(|b| point.mean_reward > b.0) {
            self.best = Some((point.mean_reward, self.steps, policy.net));
        }
        let solved = self.config.solved_mean_len.is_some_and(|t| report.episodes.len() > 0 && point.mean_len >= t);
        self.evals.push(point);
        if solved {
            self.solved_at = Some(self.steps);
            return Ok(Flow::Stop);
        }
        Ok(Flow::Continue)
    }
}

impl Consumer for Trainer<'_> {
    fn consume(&mut self, message: Message) -> Result<Flow, TrainError> {
        match message {
            Message::Transition { transition, .. } => {
                self.buffer.push(transition);
                self.steps += 1;
                let ready = self.buffer.len() >= self.config.batch_size.max(self.config.warmup_steps);
                if ready && self.steps % self.config.train_every == 0 {
                    let loss = self.learner.train_step(&self.buffer)?;
                    self.losses.0 += loss;
                    self.losses.1 += 1;
                    if self.learner.updates() % self.config.param_sync_interval == 0 {
                        self.published = Some(Arc::new(self.learner.online().params().to_vec()));
                    }
                }
                if self.steps % self.config.log_interval == 0 {
                    self.log_row();
                }
                if self.config.eval_interval > 0 && self.steps % self.config.eval_interval == 0 {
                    return self.evaluate();
                }
            }
            Message::Episode(record) => {
                if self.recent.len() == RECENT_EPISODES {
                    self.recent.pop_front();
                }
                self.recent.push_back((record.reward, record.len));
                self.episodes.push(TrainEpisode { step: self.steps, record });
            }
            Message::Fault { worker, message } => {
                self.faults += 1;
                log::warn!("worker {worker} restarted an episode after a fault: {message}");
            }
        }
        Ok(Flow::Continue)
    }

    fn take_published(&mut self) -> Option<Arc<Vec<f64>>> {
        self.published.take()
    }
}

/// Trains until `config.total_steps` transitions have been collected (counting
/// those behind a resumed checkpoint) or a greedy evaluation reports the task
/// solved. `on_log` sees every log row as it is produced.
pub fn train(
    env_config: &EnvConfig,
    config: &TrainerConfig,
    resume: Option<&PolicyCheckpoint>,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let spaces = env_config.factory()?.spaces();
    let map = Map::new(&spaces, config.action_grid);
    let (net, start) = match resume {
        Some(ckpt) => {
            ckpt.check_spaces(&spaces)?;
            (ckpt.net.clone(), ckpt.steps)
        }
        None => {
            let mut sizes = vec![spaces.observation_len()];
            sizes.extend(&config.hidden);
            sizes.push(map.len());
            (Mlp::new(&sizes, &mut RngStream::new(config.seed, "q-network-init")), 0)
        }
    };
    let learner = Learner::new(net.clone(), config, RngStream::new(config.seed, "replay-sampling"));
    let mut trainer = Trainer {
        config,
        env_config,
        buffer: ReplayBuffer::new(config.buffer_capacity),
        learner,
        map,
        steps: start,
        episodes: Vec::new(),
        recent: VecDeque::new(),
        losses: (0.0, 0),
        log: Vec::new(),
        evals: Vec::new(),
        best: None,
        solved_at: None,
        faults: 0,
        published: None,
        started: Instant::now(),
        on_log,
    };
    let budget = config.total_steps.saturating_sub(start);
    rollout::run(env_config, config, &net, budget, start, &mut trainer)?;
    if trainer.log.last().is_none_or(|r| r.steps != trainer.steps) {
        trainer.log_row();
    }
    let (steps, net) = match trainer.best.take() {
        Some((reward, step, net)) => {
            log::info!("keeping the network evaluated at step {step} (mean reward {reward:.3})");
            (step, net)
        }
        None => (trainer.steps, trainer.learner.online().clone()),
    };
    let checkpoint = PolicyCheckpoint { spaces, trainer: config.clone(), env: env_config.clone(), steps, net };
    Ok(TrainOutcome {
        checkpoint,
        episodes: trainer.episodes,
        log: trainer.log,
        evals: trainer.evals,
        solved_at: trainer.solved_at,
        faults: trainer.faults,
        updates: trainer.learner.updates(),
    })
}
