//! The RL environment facade: `initialise`, `reset` and `step` on top of the
//! event kernel.
//!
//! A step hands the worker's actions to the broker, which broadcasts them to
//! the addressed agents. The kernel then runs until the next STEP event; the
//! agents due at that instant report observation, reward and done flag back
//! to the broker, which assembles the [`StepResult`]. STEP events are never
//! dispatched to scenario code, and STEPs sharing a timestamp are returned
//! together.

mod platform;
pub mod trace;

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::bus::{BusError, Payload, Signal, SignalBus, SignalType};
use crate::config::{ConfigError, EnvConfig};
use crate::des::{ComponentId, Control, DesError, DispatchError, Event, EventKind, Kernel, RunOutcome, TraceRecord};
use crate::netsim::Packet;
use crate::rng::derive_seed;
use crate::spaces::{ActionValue, AgentId, Observation, SpaceDescriptor, SpaceError};
use crate::time::SimTime;

pub use platform::{Broker, Platform, SimContext, Stepper};
use platform::Router;

pub const STEPPER: ComponentId = ComponentId(0);
pub const BROKER: ComponentId = ComponentId(1);

/// Event payloads used by the platform and the bundled scenarios.
#[derive(Clone, Debug, PartialEq)]
pub enum EventData {
    None,
    Agent(AgentId),
    Packet(Packet),
    Token(u64),
}

pub type SimEvent = Event<EventData>;
pub type SimKernel = Kernel<EventData>;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("no action supplied for agent {0}, whose step just ended")]
    MissingAction(AgentId),
    #[error("agent {0} was not stepped at the previous STEP and cannot take an action")]
    AgentNotDue(AgentId),
    #[error("the episode is over; call reset()")]
    EpisodeOver,
    #[error("the environment has not been reset")]
    NotReset,
    #[error("agent {0} is already registered")]
    DuplicateAgent(AgentId),
    #[error("agent {0} requested a zero-length step")]
    ZeroDuration(AgentId),
    #[error("invalid action for agent {agent}: {source}")]
    InvalidAction { agent: AgentId, source: SpaceError },
    #[error("invalid observation from agent {agent}: {source}")]
    InvalidObservation { agent: AgentId, source: SpaceError },
    #[error("agent {agent} reported a non-finite reward {reward}")]
    InvalidReward { agent: AgentId, reward: f64 },
    #[error("agent {agent} faulted: {message}")]
    AgentFault { agent: AgentId, message: String },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Des(#[from] DesError),
    #[error(transparent)]
    Dispatch(Box<DispatchError<EnvError>>),
    #[error("event trace: {0}")]
    Trace(#[from] io::Error),
}

pub(crate) fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_owned()
    }
}

/// The RL-facing side of an in-simulation agent.
///
/// `get_obs`, `get_reward` and `get_done` take `&self`: they cannot schedule
/// anything. Per-step bookkeeping belongs in `on_step_end`, which the
/// platform calls first.
pub trait RlAgent {
    fn on_step_end(&mut self, _now: SimTime) {}
    fn get_obs(&self) -> Observation;
    fn get_reward(&self) -> f64;
    fn get_done(&self) -> bool {
        false
    }
    fn set_action(&mut self, action: &ActionValue, ctx: &mut SimContext<'_>) -> Result<(), EnvError>;
}

/// The simulated world behind an environment.
pub trait Scenario: Send + Any {
    fn handle_event(&mut self, ev: SimEvent, ctx: &mut SimContext<'_>) -> Result<Control, EnvError>;

    fn agent_mut(&mut self, id: &AgentId) -> Option<&mut dyn RlAgent>;

    /// Delivers an action. Override when applying it needs more than the
    /// agent itself (e.g. sending packets).
    fn on_action(
        &mut self,
        id: &AgentId,
        action: &ActionValue,
        ctx: &mut SimContext<'_>,
    ) -> Result<(), EnvError> {
        match self.agent_mut(id) {
            Some(agent) => agent.set_action(action, ctx),
            None => Err(EnvError::UnknownAgent(id.clone())),
        }
    }

    /// True while agents that have not registered yet may still appear, so
    /// that "every agent is done" does not end the episode prematurely.
    fn expects_more_agents(&self) -> bool {
        false
    }

    fn is_terminal(&self) -> bool {
        false
    }

    /// Scenario-specific evaluation metrics for the episode so far.
    fn metrics(&mut self, _now: SimTime) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    fn as_any(&self) -> &dyn Any;
}

/// Builds a fresh scenario for each episode.
pub trait ScenarioFactory: Send + Sync {
    fn spaces(&self) -> SpaceDescriptor;

    /// Constructs the scenario and schedules its initial events.
    fn build(&self, ctx: &mut SimContext<'_>) -> Result<Box<dyn Scenario>, EnvError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: BTreeMap<AgentId, Observation>,
    pub rewards: BTreeMap<AgentId, f64>,
    pub dones: BTreeMap<AgentId, bool>,
    pub episode_done: bool,
    /// Simulated time of the STEP boundary (or of the last event, if the
    /// event queue ran dry).
    pub time: SimTime,
}

impl StepResult {
    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.observations.keys()
    }
}

/// A clonable handle to one trace file shared by successive episodes.
#[derive(Clone)]
struct SharedWriter(Arc<Mutex<BufWriter<File>>>);

impl Write for SharedWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("trace writer poisoned").write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.lock().expect("trace writer poisoned").flush()
    }
}

enum TraceMode {
    Off,
    Memory,
    File(SharedWriter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Fresh,
    Running,
    Over,
}

struct Sim {
    kernel: SimKernel,
    bus: SignalBus,
    platform: Platform,
    scenario: Box<dyn Scenario>,
}

pub struct Environment {
    factory: Arc<dyn ScenarioFactory>,
    spaces: SpaceDescriptor,
    base_seed: u64,
    max_steps: Option<u64>,
    trace: TraceMode,
    sim: Sim,
    state: State,
    /// Agents stepped at the last boundary that still need an action.
    due: BTreeSet<AgentId>,
    steps: u64,
    resets: u64,
    seed: u64,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("seed", &self.seed)
            .field("state", &self.state)
            .field("steps", &self.steps)
            .field("kernel", &self.sim.kernel)
            .finish()
    }
}

impl Environment {
    /// Builds the environment described by `config`. Initial events are
    /// scheduled but none is dispatched until [`Environment::reset`].
    pub fn initialise(config: &EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let mut env = Self::from_factory(config.factory()?, config.seed, config.max_steps)?;
        if let Some(path) = &config.event_trace_path {
            env.trace_events_to(path)?;
        }
        Ok(env)
    }

    pub fn from_factory(
        factory: Arc<dyn ScenarioFactory>,
        seed: u64,
        max_steps: Option<u64>,
    ) -> Result<Self, EnvError> {
        let spaces = factory.spaces();
        spaces.validate().map_err(|e| EnvError::Scenario(e.to_string()))?;
        let sim = Self::build(&*factory, seed, &TraceMode::Off)?;
        Ok(Environment {
            factory,
            spaces,
            base_seed: seed,
            max_steps,
            trace: TraceMode::Off,
            sim,
            state: State::Fresh,
            due: BTreeSet::new(),
            steps: 0,
            resets: 0,
            seed,
        })
    }

    fn build(factory: &dyn ScenarioFactory, seed: u64, trace: &TraceMode) -> Result<Sim, EnvError> {
        let mut kernel = SimKernel::new(seed);
        match trace {
            TraceMode::Off => {}
            TraceMode::Memory => kernel.record_trace(),
            TraceMode::File(w) => kernel.trace_to(Box::new(w.clone())),
        }
        let mut bus = SignalBus::new();
        let mut platform = Platform::new(&mut bus);
        let scenario = {
            let mut ctx = SimContext { kernel: &mut kernel, bus: &mut bus, platform: &mut platform };
            factory.build(&mut ctx)?
        };
        Ok(Sim { kernel, bus, platform, scenario })
    }

    /// Keeps dispatched events in memory from the next reset on.
    pub fn record_events(&mut self) {
        self.trace = TraceMode::Memory;
    }

    /// Writes `timestamp_ns,sequence,target,kind` lines for every dispatched
    /// event of every subsequent episode to `path`.
    pub fn trace_events_to(&mut self, path: &Path) -> Result<(), EnvError> {
        let file = File::create(path)?;
        self.trace = TraceMode::File(SharedWriter(Arc::new(Mutex::new(BufWriter::new(file)))));
        Ok(())
    }

    pub fn event_trace(&self) -> &[TraceRecord] {
        self.sim.kernel.trace_records()
    }

    pub fn flush_trace(&mut self) -> Result<(), EnvError> {
        self.sim.kernel.flush_trace()?;
        Ok(())
    }

    pub fn spaces(&self) -> &SpaceDescriptor {
        &self.spaces
    }

    pub fn now(&self) -> SimTime {
        self.sim.kernel.now()
    }

    /// Seed of the current episode.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `step()` calls made in the current episode.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_episode_over(&self) -> bool {
        self.state == State::Over
    }

    /// Agents that must receive an action in the next `step()`.
    pub fn due_agents(&self) -> impl Iterator<Item = &AgentId> {
        self.due.iter()
    }

    pub fn platform(&self) -> &Platform {
        &self.sim.platform
    }

    pub fn scenario(&self) -> &dyn Scenario {
        &*self.sim.scenario
    }

    /// The scenario as its concrete type, for inspection.
    pub fn scenario_as<T: 'static>(&self) -> Option<&T> {
        self.sim.scenario.as_any().downcast_ref()
    }

    pub fn metrics(&mut self) -> BTreeMap<String, f64> {
        let now = self.sim.kernel.now();
        self.sim.scenario.metrics(now)
    }

    /// Rebuilds the world and runs it to the first STEP.
    ///
    /// Without an explicit seed the first reset uses the configured seed and
    /// later ones derive a fresh seed from it, so successive episodes differ
    /// but a run is still reproducible.
    ///
    /// The episode can already be over when the first observations arrive
    /// (a short flow may finish during slow start); check
    /// [`is_episode_over`](Self::is_episode_over) before stepping.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<BTreeMap<AgentId, Observation>, EnvError> {
        let seed = seed.unwrap_or_else(|| {
            if self.resets == 0 {
                self.base_seed
            } else {
                derive_seed(self.base_seed, self.resets)
            }
        });
        self.resets += 1;
        self.flush_trace()?;
        self.state = State::Over;
        self.sim = Self::build(&*self.factory, seed, &self.trace)?;
        self.seed = seed;
        self.steps = 0;
        self.due.clear();
        let result = self.advance()?;
        if result.observations.is_empty() && result.episode_done {
            return Err(EnvError::Scenario(
                "event queue exhausted before any agent produced an observation".into(),
            ));
        }
        self.finish_step(&result);
        Ok(result.observations)
    }

    pub fn step(&mut self, actions: &BTreeMap<AgentId, ActionValue>) -> Result<StepResult, EnvError> {
        match self.state {
            State::Fresh => return Err(EnvError::NotReset),
            State::Over => return Err(EnvError::EpisodeOver),
            State::Running => {}
        }
        self.check_actions(actions)?;
        // Anything failing past this point leaves the world half-stepped.
        self.state = State::Over;
        self.steps += 1;
        self.deliver_actions(actions)?;
        let mut result = self.advance()?;
        if self.max_steps.is_some_and(|cap| self.steps >= cap) {
            result.episode_done = true;
        }
        self.finish_step(&result);
        Ok(result)
    }

    fn check_actions(&self, actions: &BTreeMap<AgentId, ActionValue>) -> Result<(), EnvError> {
        for (id, action) in actions {
            if !self.due.contains(id) {
                return Err(if self.sim.platform.registry.contains_key(id) {
                    EnvError::AgentNotDue(id.clone())
                } else {
                    EnvError::UnknownAgent(id.clone())
                });
            }
            self.spaces
                .check_action(action)
                .map_err(|source| EnvError::InvalidAction { agent: id.clone(), source })?;
        }
        if let Some(missing) = self.due.iter().find(|id| !actions.contains_key(*id)) {
            return Err(EnvError::MissingAction(missing.clone()));
        }
        Ok(())
    }

    fn deliver_actions(&mut self, actions: &BTreeMap<AgentId, ActionValue>) -> Result<(), EnvError> {
        let Sim { kernel, bus, platform, scenario } = &mut self.sim;
        platform.broker.begin_step(actions);
        for (id, action) in actions {
            let mut router = Router { kernel, platform, scenario: Some(&mut **scenario) };
            bus.publish(
                Signal::new(SignalType::ActionBroadcast, BROKER, Payload::Action(id.clone(), action.clone())),
                &mut router,
            )?;
        }
        Ok(())
    }

    /// Runs events up to the next STEP boundary and collects the reports of
    /// the agents due there.
    fn advance(&mut self) -> Result<StepResult, EnvError> {
        let Sim { kernel, bus, platform, scenario } = &mut self.sim;
        let outcome = kernel
            .run_until(
                |ev| ev.kind == EventKind::Step,
                |kernel, ev| {
                    let mut ctx = SimContext { kernel, bus: &mut *bus, platform: &mut *platform };
                    scenario.handle_event(ev, &mut ctx)
                },
            )
            .map_err(|e| EnvError::Dispatch(Box::new(e)))?;

        let (due, ran_dry) = match outcome {
            RunOutcome::Matched(first) => {
                let now = kernel.now();
                let mut fired = vec![first];
                fired.extend(kernel.take_simultaneous(now, |ev| ev.kind == EventKind::Step));
                let mut due = BTreeSet::new();
                for ev in fired {
                    if let EventData::Agent(id) = &ev.payload {
                        platform.stepper.fired(id, ev.seq);
                        if platform.registry.contains_key(id) {
                            due.insert(id.clone());
                        }
                    }
                }
                (due, false)
            }
            RunOutcome::Exhausted | RunOutcome::Halted => {
                (platform.live_agents().into_iter().collect(), true)
            }
        };

        platform.broker.begin_step(&BTreeMap::new());
        let now = kernel.now();
        for id in &due {
            let agent = scenario.agent_mut(id).ok_or_else(|| EnvError::UnknownAgent(id.clone()))?;
            let (obs, reward, done) = catch_unwind(AssertUnwindSafe(|| {
                agent.on_step_end(now);
                (agent.get_obs(), agent.get_reward(), agent.get_done())
            }))
            .map_err(|p| EnvError::AgentFault { agent: id.clone(), message: panic_message(p) })?;
            self.spaces
                .check_observation(&obs)
                .map_err(|source| EnvError::InvalidObservation { agent: id.clone(), source })?;
            if !reward.is_finite() {
                return Err(EnvError::InvalidReward { agent: id.clone(), reward });
            }
            if done {
                platform.finished.insert(id.clone());
            }
            let component = platform.component_of(id).expect("due agents are registered");
            let mut router = Router { kernel, platform, scenario: None };
            bus.publish(
                Signal::new(SignalType::ObsReport, component, Payload::Observation(id.clone(), obs)),
                &mut router,
            )?;
            bus.publish(
                Signal::new(SignalType::RewardReport, component, Payload::Reward(id.clone(), reward)),
                &mut router,
            )?;
            bus.publish(
                Signal::new(SignalType::DoneReport, component, Payload::Done(id.clone(), done)),
                &mut router,
            )?;
        }

        let (observations, rewards, dones) = platform.broker.take_reports();
        let all_done = !platform.registry.is_empty()
            && platform.live_agents().is_empty()
            && !scenario.expects_more_agents();
        Ok(StepResult {
            observations,
            rewards,
            dones,
            episode_done: ran_dry || all_done || scenario.is_terminal(),
            time: now,
        })
    }

    fn finish_step(&mut self, result: &StepResult) {
        self.due = result.dones.iter().filter(|(_, d)| !**d).map(|(id, _)| id.clone()).collect();
        self.state = if result.episode_done { State::Over } else { State::Running };
        if result.episode_done {
            self.due.clear();
            // Trace output is diagnostic; ignore a failing sink here.
            let _ = self.sim.kernel.flush_trace();
        }
    }
}
