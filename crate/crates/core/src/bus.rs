//! In-process publish/subscribe signals.
//!
//! Components talk to each other by publishing typed signals; they never hold
//! references to one another. Delivery is synchronous: [`SignalBus::publish`]
//! returns only after every current subscriber has handled the signal, so bus
//! traffic can never be reordered relative to simulated time.
//!
//! The bus only stores *who* subscribed. The actual components live
//! elsewhere and are reached through a [`SignalSink`] supplied at publish
//! time, which lets the owner split its borrows however it needs.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::des::ComponentId;
use crate::spaces::{ActionValue, AgentId, Observation};
use crate::time::SimTime;

/// Maximum nesting of publishes made from inside a delivery.
pub const MAX_PUBLISH_DEPTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignalType {
    AgentRegister,
    AgentDeregister,
    ActionBroadcast,
    ObsReport,
    RewardReport,
    DoneReport,
    StepRequest,
    Custom(String),
}

impl SignalType {
    /// Resolves a name; names outside the built-in set become `Custom`.
    pub fn from_name(name: &str) -> Self {
        match name {
            "AGENT_REGISTER" => SignalType::AgentRegister,
            "AGENT_DEREGISTER" => SignalType::AgentDeregister,
            "ACTION_BROADCAST" => SignalType::ActionBroadcast,
            "OBS_REPORT" => SignalType::ObsReport,
            "REWARD_REPORT" => SignalType::RewardReport,
            "DONE_REPORT" => SignalType::DoneReport,
            "STEP_REQUEST" => SignalType::StepRequest,
            other => SignalType::Custom(other.to_owned()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            SignalType::AgentRegister => "AGENT_REGISTER",
            SignalType::AgentDeregister => "AGENT_DEREGISTER",
            SignalType::ActionBroadcast => "ACTION_BROADCAST",
            SignalType::ObsReport => "OBS_REPORT",
            SignalType::RewardReport => "REWARD_REPORT",
            SignalType::DoneReport => "DONE_REPORT",
            SignalType::StepRequest => "STEP_REQUEST",
            SignalType::Custom(name) => name,
        }
    }
}

impl fmt::Display for SignalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Agent(AgentId),
    Action(AgentId, ActionValue),
    Observation(AgentId, Observation),
    Reward(AgentId, f64),
    Done(AgentId, bool),
    StepDuration(AgentId, SimTime),
    Scalar(f64),
    Empty,
}

impl Payload {
    fn variant(&self) -> &'static str {
        match self {
            Payload::Agent(_) => "agent id",
            Payload::Action(..) => "action",
            Payload::Observation(..) => "observation",
            Payload::Reward(..) => "reward",
            Payload::Done(..) => "done flag",
            Payload::StepDuration(..) => "step duration",
            Payload::Scalar(_) => "scalar",
            Payload::Empty => "empty",
        }
    }

    /// The agent this payload is about, if any.
    pub fn agent(&self) -> Option<&AgentId> {
        match self {
            Payload::Agent(a)
            | Payload::Action(a, _)
            | Payload::Observation(a, _)
            | Payload::Reward(a, _)
            | Payload::Done(a, _)
            | Payload::StepDuration(a, _) => Some(a),
            Payload::Scalar(_) | Payload::Empty => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub kind: SignalType,
    pub source: ComponentId,
    pub payload: Payload,
}

impl Signal {
    pub fn new(kind: SignalType, source: ComponentId, payload: Payload) -> Self {
        Signal { kind, source, payload }
    }

    fn payload_fits(&self) -> bool {
        matches!(
            (&self.kind, &self.payload),
            (SignalType::AgentRegister | SignalType::AgentDeregister, Payload::Agent(_))
                | (SignalType::ActionBroadcast, Payload::Action(..))
                | (SignalType::ObsReport, Payload::Observation(..))
                | (SignalType::RewardReport, Payload::Reward(..))
                | (SignalType::DoneReport, Payload::Done(..))
                | (SignalType::StepRequest, Payload::StepDuration(..))
                | (SignalType::Custom(_), _)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionHandle(u64);

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("{kind} signal cannot carry a {payload} payload")]
    PayloadMismatch { kind: SignalType, payload: &'static str },
    #[error("publish nested deeper than {MAX_PUBLISH_DEPTH} while delivering {kind}")]
    TooDeep { kind: SignalType },
    #[error("subscriber {subscriber} is not reachable from this publisher")]
    Unreachable { subscriber: ComponentId },
}

/// Routes a delivery to the component behind a subscriber id.
pub trait SignalSink {
    type Error: From<BusError>;

    fn deliver(
        &mut self,
        bus: &mut SignalBus,
        subscriber: ComponentId,
        signal: &Signal,
    ) -> Result<(), Self::Error>;
}

#[derive(Debug, Default)]
pub struct SignalBus {
    subscriptions: BTreeMap<SignalType, Vec<(SubscriptionHandle, ComponentId)>>,
    next_handle: u64,
    depth: usize,
    published: u64,
}

impl SignalBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, kind: SignalType, subscriber: ComponentId) -> SubscriptionHandle {
        let handle = SubscriptionHandle(self.next_handle);
        self.next_handle += 1;
        self.subscriptions.entry(kind).or_default().push((handle, subscriber));
        handle
    }

    pub fn unsubscribe(&mut self, handle: SubscriptionHandle) -> bool {
        for subs in self.subscriptions.values_mut() {
            if let Some(pos) = subs.iter().position(|(h, _)| *h == handle) {
                subs.remove(pos);
                return true;
            }
        }
        false
    }

    pub fn subscriber_count(&self, kind: &SignalType) -> usize {
        self.subscriptions.get(kind).map_or(0, Vec::len)
    }

    /// Total signals published over the bus lifetime.
    pub fn published(&self) -> u64 {
        self.published
    }

    /// Delivers `signal` to every current subscriber of its type, in
    /// subscription order, and returns how many deliveries were made.
    pub fn publish<S: SignalSink + ?Sized>(
        &mut self,
        signal: Signal,
        sink: &mut S,
    ) -> Result<usize, S::Error> {
        if !signal.payload_fits() {
            return Err(BusError::PayloadMismatch {
                kind: signal.kind.clone(),
                payload: signal.payload.variant(),
            }
            .into());
        }
        if self.depth >= MAX_PUBLISH_DEPTH {
            return Err(BusError::TooDeep { kind: signal.kind.clone() }.into());
        }
        self.published += 1;
        // Snapshot so that (un)subscriptions made during delivery apply only
        // to later publications.
        let targets: Vec<(SubscriptionHandle, ComponentId)> =
            self.subscriptions.get(&signal.kind).cloned().unwrap_or_default();
        self.depth += 1;
        let mut delivered = 0;
        let mut result = Ok(());
        for (handle, subscriber) in targets {
            if !self.is_active(&signal.kind, handle) {
                continue;
            }
            if let Err(e) = sink.deliver(self, subscriber, &signal) {
                result = Err(e);
                break;
            }
            delivered += 1;
        }
        self.depth -= 1;
        result.map(|()| delivered)
    }

    fn is_active(&self, kind: &SignalType, handle: SubscriptionHandle) -> bool {
        self.subscriptions.get(kind).is_some_and(|v| v.iter().any(|(h, _)| *h == handle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records deliveries; optionally republishes to exercise nesting.
    #[derive(Default)]
    struct Recorder {
        log: Vec<(ComponentId, Signal)>,
        echo: Option<SignalType>,
        unsubscribe_on_delivery: Option<SubscriptionHandle>,
    }

    impl SignalSink for Recorder {
        type Error = BusError;

        fn deliver(
            &mut self,
            bus: &mut SignalBus,
            subscriber: ComponentId,
            signal: &Signal,
        ) -> Result<(), BusError> {
            self.log.push((subscriber, signal.clone()));
            if let Some(h) = self.unsubscribe_on_delivery.take() {
                bus.unsubscribe(h);
            }
            if let Some(kind) = self.echo.clone() {
                bus.publish(Signal::new(kind, subscriber, Payload::Empty), self)?;
            }
            Ok(())
        }
    }

    const BROKER: ComponentId = ComponentId(1);
    const STEPPER: ComponentId = ComponentId(0);

    fn obs(agent: &str) -> Signal {
        Signal::new(
            SignalType::ObsReport,
            ComponentId(5),
            Payload::Observation(agent.into(), vec![1.0]),
        )
    }

    #[test]
    fn single_subscriber_delivered_once() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::ObsReport, BROKER);
        let mut rec = Recorder::default();
        assert_eq!(bus.publish(obs("a"), &mut rec), Ok(1));
        assert_eq!(rec.log.len(), 1);
        assert_eq!(rec.log[0].0, BROKER);
    }

    #[test]
    fn two_subscribers_each_once() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::ObsReport, BROKER);
        bus.subscribe(SignalType::ObsReport, STEPPER);
        let mut rec = Recorder::default();
        assert_eq!(bus.publish(obs("a"), &mut rec), Ok(2));
        let targets: Vec<_> = rec.log.iter().map(|(c, _)| *c).collect();
        assert_eq!(targets, vec![BROKER, STEPPER]);
    }

    #[test]
    fn no_replay_for_late_subscribers() {
        let mut bus = SignalBus::new();
        let mut rec = Recorder::default();
        assert_eq!(bus.publish(obs("a"), &mut rec), Ok(0));
        bus.subscribe(SignalType::ObsReport, BROKER);
        assert!(rec.log.is_empty());
        bus.publish(obs("b"), &mut rec).unwrap();
        assert_eq!(rec.log.len(), 1);
    }

    #[test]
    fn payload_mismatch_rejected() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::ActionBroadcast, BROKER);
        let bad = Signal::new(
            SignalType::ActionBroadcast,
            BROKER,
            Payload::Observation("a".into(), vec![0.0]),
        );
        let err = bus.publish(bad, &mut Recorder::default()).unwrap_err();
        assert!(matches!(err, BusError::PayloadMismatch { .. }));
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let mut bus = SignalBus::new();
        let h = bus.subscribe(SignalType::ObsReport, BROKER);
        assert!(bus.unsubscribe(h));
        assert!(!bus.unsubscribe(h));
        assert_eq!(bus.publish(obs("a"), &mut Recorder::default()), Ok(0));
    }

    #[test]
    fn unsubscribe_during_delivery_takes_effect_immediately() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::ObsReport, BROKER);
        let second = bus.subscribe(SignalType::ObsReport, STEPPER);
        let mut rec = Recorder { unsubscribe_on_delivery: Some(second), ..Default::default() };
        assert_eq!(bus.publish(obs("a"), &mut rec), Ok(1));
    }

    #[test]
    fn delivery_order_matches_publication_order() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::ObsReport, BROKER);
        let mut rec = Recorder::default();
        for a in ["a", "b", "c"] {
            bus.publish(obs(a), &mut rec).unwrap();
        }
        let agents: Vec<_> =
            rec.log.iter().map(|(_, s)| s.payload.agent().unwrap().to_string()).collect();
        assert_eq!(agents, vec!["a", "b", "c"]);
    }

    #[test]
    fn signal_loops_hit_the_depth_limit() {
        let loop_kind = SignalType::from_name("PING");
        let mut bus = SignalBus::new();
        bus.subscribe(loop_kind.clone(), BROKER);
        let mut rec = Recorder { echo: Some(loop_kind.clone()), ..Default::default() };
        let err = bus.publish(Signal::new(loop_kind.clone(), BROKER, Payload::Empty), &mut rec);
        assert_eq!(err, Err(BusError::TooDeep { kind: loop_kind }));
        assert_eq!(rec.log.len(), MAX_PUBLISH_DEPTH);
    }

    #[test]
    fn bounded_nesting_is_allowed() {
        let mut bus = SignalBus::new();
        bus.subscribe(SignalType::from_name("OUTER"), BROKER);
        bus.subscribe(SignalType::from_name("INNER"), STEPPER);
        let mut rec = Recorder { echo: None, ..Default::default() };
        // OUTER delivery publishes INNER once.
        struct Chain(Recorder);
        impl SignalSink for Chain {
            type Error = BusError;
            fn deliver(
                &mut self,
                bus: &mut SignalBus,
                subscriber: ComponentId,
                signal: &Signal,
            ) -> Result<(), BusError> {
                self.0.log.push((subscriber, signal.clone()));
                if signal.kind.name() == "OUTER" {
                    bus.publish(
                        Signal::new(SignalType::from_name("INNER"), subscriber, Payload::Empty),
                        self,
                    )?;
                }
                Ok(())
            }
        }
        let mut chain = Chain(std::mem::take(&mut rec));
        let n = bus
            .publish(Signal::new(SignalType::from_name("OUTER"), BROKER, Payload::Empty), &mut chain)
            .unwrap();
        assert_eq!(n, 1);
        assert_eq!(chain.0.log.len(), 2);
        assert_eq!(chain.0.log[1].0, STEPPER);
    }

    #[test]
    fn names_round_trip() {
        for name in [
            "AGENT_REGISTER",
            "AGENT_DEREGISTER",
            "ACTION_BROADCAST",
            "OBS_REPORT",
            "REWARD_REPORT",
            "DONE_REPORT",
            "STEP_REQUEST",
            "MY_SIGNAL",
        ] {
            assert_eq!(SignalType::from_name(name).name(), name);
        }
    }
}
