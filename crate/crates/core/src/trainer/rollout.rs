//! Rollout workers.
//!
//! Each worker owns one environment and a private copy of the policy
//! parameters. Workers share nothing with each other: transitions go to the
//! single consumer over a bounded channel (a full channel blocks the
//! worker), and parameters come back through a versioned board the consumer
//! publishes to. With one worker everything runs inline on the caller's
//! thread, which makes a whole training run reproducible.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, RwLock};

use crate::config::EnvConfig;
use crate::env::Environment;
use crate::rng::{derive_seed, RngStream};
use crate::spaces::{AgentId, Observation};
use crate::trainer::mlp::Mlp;
use crate::trainer::policy::{act, ActionMap};
use crate::trainer::replay::Transition;
use crate::trainer::{TrainError, TrainerConfig};

/// Consecutive environment faults after which a worker gives up.
const MAX_CONSECUTIVE_FAULTS: u32 = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub worker: usize,
    /// Environment seed the episode ran with.
    pub seed: u64,
    pub reward: f64,
    pub len: u64,
    /// Scenario metrics at the end of the episode.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub enum Message {
    Transition { worker: usize, transition: Transition },
    Episode(EpisodeRecord),
    Fault { worker: usize, message: String },
}

/// What the consumer wants after handling a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// The single consumer of worker output.
pub trait Consumer {
    fn consume(&mut self, message: Message) -> Result<Flow, TrainError>;

    /// New parameters for the workers, if any were published since the
    /// last call.
    fn take_published(&mut self) -> Option<Arc<Vec<f64>>>;
}

pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    derive_seed(seed, worker as u64)
}

/// One environment plus an epsilon-greedy copy of the policy.
pub struct Actor {
    worker: usize,
    env: Environment,
    net: Mlp,
    map: ActionMap,
    rng: RngStream,
    /// Observations of agents waiting for an action; `None` between
    /// episodes.
    current: Option<BTreeMap<AgentId, Observation>>,
    ep_reward: f64,
    ep_len: u64,
    faults: u32,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub transitions: Vec<Transition>,
    pub episode: Option<EpisodeRecord>,
    pub fault: Option<String>,
}

impl Actor {
    pub fn new(env_config: &EnvConfig, config: &TrainerConfig, worker: usize, net: Mlp) -> Result<Self, TrainError> {
        let seed = worker_seed(config.seed, worker);
        let env_config = EnvConfig { seed, ..env_config.clone() };
        let env = Environment::initialise(&env_config)?;
        let map = ActionMap::new(env.spaces(), config.action_grid);
        Ok(Actor {
            worker,
            env,
            net,
            map,
            rng: RngStream::new(seed, "exploration"),
            current: None,
            ep_reward: 0.0,
            ep_len: 0,
            faults: 0,
        })
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.net.set_params(params);
    }

    /// Advances the environment by one `step()` call, resetting first if
    /// no episode is running. An environment error abandons the episode.
    pub fn step(&mut self, epsilon: f64) -> Result<StepOutput, TrainError> {
        match self.try_step(epsilon) {
            Ok(out) => {
                self.faults = 0;
                Ok(out)
            }
            Err(TrainError::Env(e)) => {
                self.current = None;
                self.faults += 1;
                log::warn!("worker {}: environment fault, restarting episode: {e}", self.worker);
                if self.faults >= MAX_CONSECUTIVE_FAULTS {
                    return Err(TrainError::TooManyFaults { worker: self.worker, last: e.to_string() });
                }
                Ok(StepOutput { fault: Some(e.to_string()), ..Default::default() })
            }
            Err(e) => Err(e),
        }
    }

    fn try_step(&mut self, epsilon: f64) -> Result<StepOutput, TrainError> {
        let current = match self.current.take() {
            Some(obs) => obs,
            None => {
                self.ep_reward = 0.0;
                self.ep_len = 0;
                self.env.reset(None)?
            }
        };
        let mut chosen = BTreeMap::new();
        let mut actions = BTreeMap::new();
        for (agent, obs) in &current {
            let index = act(&self.net.forward(obs), epsilon, &mut self.rng);
            actions.insert(agent.clone(), self.map.action(index)?);
            chosen.insert(agent.clone(), index);
        }
        let result = self.env.step(&actions)?;
        self.ep_len += 1;
        let mut out = StepOutput::default();
        let mut next = BTreeMap::new();
        for (agent, next_obs) in result.observations {
            let reward = result.rewards[&agent];
            let done = result.dones[&agent];
            self.ep_reward += reward;
            if let (Some(obs), Some(&action)) = (current.get(&agent), chosen.get(&agent)) {
                out.transitions.push(Transition {
                    agent: agent.clone(),
                    observation: obs.clone(),
                    action,
                    reward,
                    next_observation: next_obs.clone(),
                    done,
                });
            }
            if !done {
                next.insert(agent, next_obs);
            }
        }
        if result.episode_done {
            out.episode = Some(EpisodeRecord {
                worker: self.worker,
                seed: self.env.seed(),
                reward: self.ep_reward,
                len: self.ep_len,
                metrics: self.env.metrics(),
            });
        } else {
            self.current = Some(next);
        }
        Ok(out)
    }
}

/// Runs `config.workers` actors until `budget` transitions have been handed
/// to `consumer` or it asks to stop. Worker `i` explores with the epsilon of
/// global step `offset + i_local * workers`, so its trajectory depends only
/// on its seed and the parameters it was sent.
pub fn run(
    env_config: &EnvConfig,
    config: &TrainerConfig,
    net: &Mlp,
    budget: u64,
    offset: u64,
    consumer: &mut dyn Consumer,
) -> Result<(), TrainError> {
    if config.workers == 1 {
        return run_inline(env_config, config, net, budget, offset, consumer);
    }
    let board: Board = RwLock::new((0u64, Arc::new(net.params().to_vec())));
    let claimed = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = sync_channel::<Message>(config.queue_capacity);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..config.workers {
            let tx = tx.clone();
            let (board, claimed, stop) = (&board, &claimed, &stop);
            let net = net.clone();
            handles.push(scope.spawn(move || {
                let res = worker_loop(env_config, config, worker, net, budget, offset, board, claimed, stop, tx);
                if res.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                res
            }));
        }
        drop(tx);
        let mut failure = None;
        for message in rx.iter() {
            if stop.load(Ordering::Relaxed) {
                // Drain so blocked workers can notice the stop flag.
                continue;
            }
            match consumer.consume(message) {
                Ok(Flow::Continue) => {}
                Ok(Flow::Stop) => stop.store(true, Ordering::Relaxed),
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    failure = Some(e);
                }
            }
            if let Some(params) = consumer.take_published() {
                let mut guard = board.write().expect("parameter board poisoned");
                guard.0 += 1;
                guard.1 = params;
            }
        }
        for handle in handles {
            let res = handle.join().map_err(|p| TrainError::WorkerPanic(crate::env::panic_message(p)))?;
            if let Err(e) = res {
                failure.get_or_insert(e);
            }
        }
        failure.map_or(Ok(()), Err)
    })
}

type Board = RwLock<(u64, Arc<Vec<f64>>)>;

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    env_config: &EnvConfig,
    config: &TrainerConfig,
    worker: usize,
    net: Mlp,
    budget: u64,
    offset: u64,
    board: &Board,
    claimed: &AtomicU64,
    stop: &AtomicBool,
    tx: SyncSender<Message>,
) -> Result<(), TrainError> {
    let n = config.workers as u64;
    let mut actor = Actor::new(env_config, config, worker, net)?;
    let mut version = 0;
    let mut local = 0u64;
    while !stop.load(Ordering::Relaxed) {
        {
            let guard = board.read().expect("parameter board poisoned");
            if guard.0 != version {
                version = guard.0;
                actor.set_params(&guard.1);
            }
        }
        let out = actor.step(config.epsilon(offset + local * n))?;
        if let Some(message) = out.fault {
            if tx.send(Message::Fault { worker, message }).is_err() {
                return Ok(());
            }
        }
        for transition in out.transitions {
            // Claims past the budget fail for every worker, so exactly
            // `budget` transitions are sent.
            if claimed.fetch_add(1, Ordering::Relaxed) >= budget {
                return Ok(());
            }
            local += 1;
            if tx.send(Message::Transition { worker, transition }).is_err() {
                return Ok(());
            }
        }
        if let Some(ep) = out.episode {
            if tx.send(Message::Episode(ep)).is_err() {
                return Ok(());
            }
        }
    }
    Ok(())
}

fn run_inline(
    env_config: &EnvConfig,
    config: &TrainerConfig,
    net: &Mlp,
    budget: u64,
    offset: u64,
    consumer: &mut dyn Consumer,
) -> Result<(), TrainError> {
    let mut actor = Actor::new(env_config, config, 0, net.clone())?;
    let mut delivered = 0u64;
    while delivered < budget {
        let out = actor.step(config.epsilon(offset + delivered))?;
        let mut messages = Vec::new();
        if let Some(message) = out.fault {
            messages.push(Message::Fault { worker: 0, message });
        }
        for transition in out.transitions {
            if delivered == budget {
                break;
            }
            delivered += 1;
            messages.push(Message::Transition { worker: 0, transition });
        }
        messages.extend(out.episode.map(Message::Episode));
        for message in messages {
            let flow = consumer.consume(message)?;
            if let Some(params) = consumer.take_published() {
                actor.set_params(&params);
            }
            if flow == Flow::Stop {
                return Ok(());
            }
        }
    }
    Ok(())
}

/// Collects with fixed parameters, returning every message in arrival
/// order. Handy for benchmarks and determinism checks.
pub fn collect(
    env_config: &EnvConfig,
    config: &TrainerConfig,
    net: &Mlp,
    budget: u64,
) -> Result<Vec<Message>, TrainError> {
    struct Sink(Vec<Message>);
    impl Consumer for Sink {
        fn consume(&mut self, message: Message) -> Result<Flow, TrainError> {
            self.0.push(message);
            Ok(Flow::Continue)
        }
        fn take_published(&mut self) -> Option<Arc<Vec<f64>>> {
            None
        }
    }
    let mut sink = Sink(Vec::new());
    run(env_config, config, net, budget, 0, &mut sink)?;
    Ok(sink.0)
}
