//! The stepper and broker components and the context handed to scenario
//! code while the simulation runs.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::bus::{BusError, Payload, Signal, SignalBus, SignalSink, SignalType, SubscriptionHandle};
use crate::des::{ComponentId, EventHandle, EventKind};
use crate::env::{panic_message, EnvError, EventData, Scenario, SimKernel, BROKER, STEPPER};
use crate::rng::RngStream;
use crate::spaces::{ActionValue, AgentId, Observation};
use crate::time::SimTime;

/// Turns step requests into STEP events, at most one pending per agent.
#[derive(Debug, Default)]
pub struct Stepper {
    pending: BTreeMap<AgentId, EventHandle>,
}

impl Stepper {
    fn on_signal(&mut self, signal: &Signal, kernel: &mut SimKernel) -> Result<(), EnvError> {
        match (&signal.kind, &signal.payload) {
            (SignalType::StepRequest, Payload::StepDuration(id, duration)) => {
                if let Some(old) = self.pending.remove(id) {
                    kernel.cancel(old);
                }
                let handle = kernel.schedule_in(
                    *duration,
                    STEPPER,
                    EventKind::Step,
                    EventData::Agent(id.clone()),
                )?;
                self.pending.insert(id.clone(), handle);
            }
            (SignalType::AgentDeregister, Payload::Agent(id)) => {
                if let Some(old) = self.pending.remove(id) {
                    kernel.cancel(old);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Forgets the STEP events that just fired.
    pub(crate) fn fired(&mut self, id: &AgentId, seq: u64) {
        if self.pending.get(id).is_some_and(|h| h.seq() == seq) {
            self.pending.remove(id);
        }
    }

    pub fn pending_step(&self, id: &AgentId) -> Option<EventHandle> {
        self.pending.get(id).copied()
    }
}

/// Holds the actions of the current step and gathers what agents report at
/// its end.
#[derive(Debug, Default)]
pub struct Broker {
    agents: BTreeSet<AgentId>,
    actions: BTreeMap<AgentId, ActionValue>,
    observations: BTreeMap<AgentId, Observation>,
    rewards: BTreeMap<AgentId, f64>,
    dones: BTreeMap<AgentId, bool>,
}

/// The three report maps for one step boundary.
pub(crate) type Reports =
    (BTreeMap<AgentId, Observation>, BTreeMap<AgentId, f64>, BTreeMap<AgentId, bool>);

impl Broker {
    fn on_signal(&mut self, signal: &Signal) {
        match &signal.payload {
            Payload::Agent(id) if signal.kind == SignalType::AgentRegister => {
                self.agents.insert(id.clone());
            }
            Payload::Agent(id) if signal.kind == SignalType::AgentDeregister => {
                self.agents.remove(id);
                self.actions.remove(id);
                self.observations.remove(id);
                self.rewards.remove(id);
                self.dones.remove(id);
            }
            Payload::Observation(id, obs) => {
                self.observations.insert(id.clone(), obs.clone());
            }
            Payload::Reward(id, r) => {
                self.rewards.insert(id.clone(), *r);
            }
            Payload::Done(id, d) => {
                self.dones.insert(id.clone(), *d);
            }
            _ => {}
        }
    }

    pub(crate) fn begin_step(&mut self, actions: &BTreeMap<AgentId, ActionValue>) {
        self.observations.clear();
        self.rewards.clear();
        self.dones.clear();
        self.actions = actions.clone();
    }

    pub fn action(&self, id: &AgentId) -> Option<&ActionValue> {
        self.actions.get(id)
    }

    pub fn knows(&self, id: &AgentId) -> bool {
        self.agents.contains(id)
    }

    pub(crate) fn take_reports(&mut self) -> Reports {
        (
            std::mem::take(&mut self.observations),
            std::mem::take(&mut self.rewards),
            std::mem::take(&mut self.dones),
        )
    }
}

#[derive(Debug)]
pub(crate) struct AgentEntry {
    pub component: ComponentId,
    action_sub: SubscriptionHandle,
}

/// Platform-owned state: stepper, broker and the agent registry.
#[derive(Debug)]
pub struct Platform {
    pub stepper: Stepper,
    pub broker: Broker,
    pub(crate) registry: BTreeMap<AgentId, AgentEntry>,
    pub(crate) retired: BTreeSet<AgentId>,
    /// Agents that have reported done this episode.
    pub(crate) finished: BTreeSet<AgentId>,
}

impl Platform {
    pub(crate) fn new(bus: &mut SignalBus) -> Self {
        for kind in [SignalType::StepRequest, SignalType::AgentRegister, SignalType::AgentDeregister] {
            bus.subscribe(kind, STEPPER);
        }
        for kind in [
            SignalType::AgentRegister,
            SignalType::AgentDeregister,
            SignalType::ObsReport,
            SignalType::RewardReport,
            SignalType::DoneReport,
        ] {
            bus.subscribe(kind, BROKER);
        }
        Platform {
            stepper: Stepper::default(),
            broker: Broker::default(),
            registry: BTreeMap::new(),
            retired: BTreeSet::new(),
            finished: BTreeSet::new(),
        }
    }

    pub(crate) fn component_of(&self, id: &AgentId) -> Option<ComponentId> {
        self.registry.get(id).map(|e| e.component)
    }

    /// Registered agents that have not reported done.
    pub(crate) fn live_agents(&self) -> Vec<AgentId> {
        self.registry.keys().filter(|id| !self.finished.contains(*id)).cloned().collect()
    }
}

/// Routes bus deliveries to the platform components and, when available,
/// to the scenario's agents.
pub(crate) struct Router<'a> {
    pub kernel: &'a mut SimKernel,
    pub platform: &'a mut Platform,
    pub scenario: Option<&'a mut dyn Scenario>,
}

impl SignalSink for Router<'_> {
    type Error = EnvError;

    fn deliver(
        &mut self,
        bus: &mut SignalBus,
        subscriber: ComponentId,
        signal: &Signal,
    ) -> Result<(), EnvError> {
        match subscriber {
            STEPPER => self.platform.stepper.on_signal(signal, self.kernel),
            BROKER => {
                self.platform.broker.on_signal(signal);
                Ok(())
            }
            component => {
                let Some(scenario) = self.scenario.as_deref_mut() else {
                    return Err(BusError::Unreachable { subscriber: component }.into());
                };
                let Payload::Action(id, action) = &signal.payload else {
                    return Ok(());
                };
                // Every agent sees every broadcast; only the addressee acts.
                if signal.kind != SignalType::ActionBroadcast
                    || self.platform.component_of(id) != Some(component)
                {
                    return Ok(());
                }
                let mut ctx = SimContext { kernel: self.kernel, bus, platform: self.platform };
                catch_unwind(AssertUnwindSafe(|| scenario.on_action(id, action, &mut ctx)))
                    .map_err(|p| EnvError::AgentFault {
                        agent: id.clone(),
                        message: panic_message(p),
                    })?
            }
        }
    }
}

/// What scenario code sees of the platform while handling an event or an
/// action.
pub struct SimContext<'a> {
    pub(crate) kernel: &'a mut SimKernel,
    pub(crate) bus: &'a mut SignalBus,
    pub(crate) platform: &'a mut Platform,
}

impl<'a> SimContext<'a> {
    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn rng(&self, id: &str) -> RngStream {
        self.kernel.rng(id)
    }

    pub fn schedule(
        &mut self,
        at: SimTime,
        target: ComponentId,
        kind: EventKind,
        data: EventData,
    ) -> Result<EventHandle, EnvError> {
        Ok(self.kernel.schedule(at, target, kind, data)?)
    }

    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: ComponentId,
        kind: EventKind,
        data: EventData,
    ) -> Result<EventHandle, EnvError> {
        Ok(self.kernel.schedule_in(delay, target, kind, data)?)
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.kernel.cancel(handle)
    }

    pub fn is_registered(&self, id: &AgentId) -> bool {
        self.platform.registry.contains_key(id)
    }

    /// Publishes a signal to platform subscribers. Scenario components are
    /// not reachable from here; they talk to each other directly.
    pub fn publish(&mut self, signal: Signal) -> Result<usize, EnvError> {
        let mut router = Router { kernel: self.kernel, platform: self.platform, scenario: None };
        self.bus.publish(signal, &mut router)
    }

    /// Makes `id` known to the stepper and broker. The agent is not stepped
    /// until it calls [`SimContext::set_next_step`].
    pub fn register_agent(&mut self, id: AgentId, component: ComponentId) -> Result<(), EnvError> {
        if self.platform.registry.contains_key(&id) || self.platform.retired.contains(&id) {
            return Err(EnvError::DuplicateAgent(id));
        }
        let action_sub = self.bus.subscribe(SignalType::ActionBroadcast, component);
        self.platform.registry.insert(id.clone(), AgentEntry { component, action_sub });
        self.publish(Signal::new(SignalType::AgentRegister, component, Payload::Agent(id)))?;
        Ok(())
    }

    /// Removes an agent mid-episode. Its pending STEP is cancelled and its
    /// id cannot be reused until the next reset.
    pub fn deregister_agent(&mut self, id: &AgentId) -> Result<(), EnvError> {
        let entry =
            self.platform.registry.remove(id).ok_or_else(|| EnvError::UnknownAgent(id.clone()))?;
        self.bus.unsubscribe(entry.action_sub);
        self.platform.retired.insert(id.clone());
        self.platform.finished.remove(id);
        self.publish(Signal::new(
            SignalType::AgentDeregister,
            entry.component,
            Payload::Agent(id.clone()),
        ))?;
        Ok(())
    }

    /// Requests the agent's next STEP `duration` from now, replacing any
    /// pending one.
    pub fn set_next_step(&mut self, id: &AgentId, duration: SimTime) -> Result<(), EnvError> {
        let component =
            self.platform.component_of(id).ok_or_else(|| EnvError::UnknownAgent(id.clone()))?;
        if duration == SimTime::ZERO {
            return Err(EnvError::ZeroDuration(id.clone()));
        }
        self.publish(Signal::new(
            SignalType::StepRequest,
            component,
            Payload::StepDuration(id.clone(), duration),
        ))?;
        Ok(())
    }
}
