//! The dumbbell scenario: N senders share one drop-tail bottleneck.
//!
//! ```text
//! sender_i --access--> ROUTER [queue] ==bottleneck, rtt/2==> receiver_i
//! sender_i <--access-- ======== reverse bottleneck, rtt/2 == receiver_i
//! ```
//! Each flow slow-starts on its own. When slow start ends the flow registers
//! an RL agent that from then on sets the window once per step of
//! `step_rtt_multiplier` times the windowed minimum RTT.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{apply_action, CcAction, CcConfig, CcEpisode, DoneReason, StepReport};
use crate::config::DumbbellConfig;
use crate::des::{ComponentId, Control, EventHandle, EventKind};
use crate::env::{EnvError, EventData, RlAgent, Scenario, ScenarioFactory, SimContext, SimEvent};
use crate::netsim::link::{Link, LinkParams};
use crate::netsim::queue::{BottleneckQueue, Enqueue};
use crate::netsim::stats::StepSnapshot;
use crate::netsim::transport::{Ack, Sender};
use crate::netsim::{bdp_packets, Packet, ACK_BYTES, DATA_BYTES};
use crate::spaces::{ActionSpace, ActionValue, AgentId, Bounds, Observation, SpaceDescriptor};
use crate::time::SimTime;

pub const ROUTER: ComponentId = ComponentId(2);
pub const SAMPLER: ComponentId = ComponentId(3);
const FIRST_FLOW_COMPONENT: u32 = 10;

pub fn sender_component(flow: u32) -> ComponentId {
    ComponentId(FIRST_FLOW_COMPONENT + 2 * flow)
}

pub fn receiver_component(flow: u32) -> ComponentId {
    ComponentId(FIRST_FLOW_COMPONENT + 2 * flow + 1)
}

/// Agent id of the zero-based flow `index`.
pub fn flow_agent_id(index: u32) -> AgentId {
    AgentId::new(format!("flow{}", index + 1))
}

pub fn spaces() -> SpaceDescriptor {
    SpaceDescriptor {
        observation: vec![Bounds::new(0.0, 1.0); 4],
        action: ActionSpace::Box { bounds: vec![Bounds::new(crate::cc::ALPHA_MIN, crate::cc::ALPHA_MAX)] },
    }
}

/// Recovers the window from the observation's log-scaled feature.
pub fn cwnd_from_feature(feature: f64, cwnd_cap: f64) -> f64 {
    (feature * cwnd_cap.log2()).exp2()
}

/// The exponent that moves `cwnd` towards `target`, limited to
/// `[-max_alpha, max_alpha]`.
pub fn alpha_towards(cwnd: f64, target: f64, max_alpha: f64) -> f64 {
    (target / cwnd).log2().clamp(-max_alpha, max_alpha)
}

/// Network parameters of one episode, after sampling any ranges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkParams {
    pub bandwidth_bps: f64,
    pub rtt: SimTime,
    pub buffer_pkts: usize,
    pub access_bps: f64,
}

impl NetworkParams {
    pub fn bdp_packets(&self) -> f64 {
        bdp_packets(self.bandwidth_bps, self.rtt)
    }

    pub fn serialisation(&self) -> SimTime {
        LinkParams::new(self.bandwidth_bps, SimTime::ZERO).serialisation(DATA_BYTES)
    }
}

/// One row of the per-flow time series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: SimTime,
    pub flow: u32,
    pub cwnd: f64,
    pub srtt_ns: f64,
    pub in_flight: u64,
    pub queue_occupancy: usize,
    pub acked: u64,
    pub lost: u64,
}

pub const SERIES_HEADER: &str = "t_ns,flow,cwnd,srtt_ns,inflight,queue_occupancy,acked,lost";

impl std::fmt::Display for SeriesRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{:?},{:?},{},{},{},{}",
            self.t.as_nanos(),
            self.flow,
            self.cwnd,
            self.srtt_ns,
            self.in_flight,
            self.queue_occupancy,
            self.acked,
            self.lost
        )
    }
}

/// Where every data packet handed to the network currently is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conservation {
    /// Transmissions counted by the senders, retransmissions included.
    pub sent: u64,
    pub on_access_link: u64,
    pub dropped: u64,
    pub queued: u64,
    pub propagating: u64,
    pub delivered: u64,
}

impl Conservation {
    pub fn balances(&self) -> bool {
        self.sent
            == self.on_access_link + self.dropped + self.queued + self.propagating + self.delivered
    }
}

/// The first bottleneck drop of an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropRecord {
    pub time: SimTime,
    pub flow: u32,
    /// The dropping flow's unacknowledged packets at that instant.
    pub in_flight: u64,
}

#[derive(Debug)]
pub struct Flow {
    index: u32,
    id: AgentId,
    start: SimTime,
    sender: Sender,
    up: Link,
    down: Link,
    rcv_next: u64,
    rcv_out_of_order: BTreeSet<u64>,
    episode: CcEpisode,
    cfg: CcConfig,
    report: Option<StepReport>,
    last_snapshot: Option<StepSnapshot>,
    registered: bool,
    started: bool,
    timer: Option<EventHandle>,
    fallback_rtt: SimTime,
    rl_bits: f64,
    rl_secs: f64,
    drops: u64,
    last_pacing: Option<(SimTime, SimTime)>,
}

impl Flow {
    pub fn id(&self) -> &AgentId {
        &self.id
    }

    pub fn sender(&self) -> &Sender {
        &self.sender
    }

    pub fn start(&self) -> SimTime {
        self.start
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    pub fn done_reason(&self) -> Option<DoneReason> {
        self.episode.done_reason()
    }

    pub fn last_snapshot(&self) -> Option<&StepSnapshot> {
        self.last_snapshot.as_ref()
    }

    /// Bottleneck drops suffered by this flow.
    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// `(windowed min RTT, requested step length)` of the latest step request.
    pub fn last_pacing(&self) -> Option<(SimTime, SimTime)> {
        self.last_pacing
    }

    fn is_finished(&self) -> bool {
        self.sender.is_completed() || self.sender.is_stopped()
    }

    fn step_length(&mut self, now: SimTime) -> SimTime {
        let wmin = self.sender.stats.windowed_min_rtt(now).unwrap_or(self.fallback_rtt);
        let len = SimTime::from_nanos((self.cfg.step_rtt_multiplier * wmin.as_nanos() as f64).round() as u64)
            .max(SimTime::from_nanos(1));
        self.last_pacing = Some((wmin, len));
        len
    }
}

impl RlAgent for Flow {
    fn on_step_end(&mut self, now: SimTime) {
        let snap = self.sender.stats.snapshot(now);
        self.rl_bits += snap.acked as f64 * DATA_BYTES as f64 * 8.0;
        self.rl_secs += snap.duration.as_secs_f64();
        let report =
            self.episode.on_step_end(&snap, self.sender.cwnd(), self.cfg.cwnd_cap_pkts, self.sender.is_completed());
        if report.done {
            self.sender.stop();
        }
        self.report = Some(report);
        self.last_snapshot = Some(snap);
    }

    fn get_obs(&self) -> Observation {
        self.report.as_ref().map_or_else(|| vec![0.0; 4], |r| r.observation.to_vec())
    }

    fn get_reward(&self) -> f64 {
        self.report.as_ref().map_or(0.0, |r| r.reward)
    }

    fn get_done(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.done)
    }

    fn set_action(&mut self, action: &ActionValue, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let alpha = match action {
            ActionValue::Continuous(v) if v.len() == 1 => v[0],
            _ => return Err(EnvError::Scenario(format!("{}: expected a single window exponent", self.id))),
        };
        let action = CcAction::new(alpha).map_err(|e| EnvError::Scenario(e.to_string()))?;
        self.sender.set_cwnd(apply_action(self.sender.cwnd(), action, self.cfg.cwnd_cap_pkts));
        self.episode.on_action();
        let len = self.step_length(ctx.now());
        ctx.set_next_step(&self.id, len)
    }
}

#[derive(Debug)]
pub struct Dumbbell {
    params: NetworkParams,
    queue: BottleneckQueue,
    forward_delay: SimTime,
    reverse: Link,
    flows: Vec<Flow>,
    sample_every: Option<SimTime>,
    series: Vec<SeriesRow>,
    on_access: u64,
    in_bottleneck: u64,
    delivered: u64,
    first_drop: Option<DropRecord>,
}

impl Dumbbell {
    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn flow(&self, index: usize) -> &Flow {
        &self.flows[index]
    }

    pub fn queue(&self) -> &BottleneckQueue {
        &self.queue
    }

    pub fn queue_occupancy(&mut self, now: SimTime) -> usize {
        self.queue.occupancy(now)
    }

    pub fn series(&self) -> &[SeriesRow] {
        &self.series
    }

    pub fn first_drop(&self) -> Option<DropRecord> {
        self.first_drop
    }

    pub fn conservation(&self, now: SimTime) -> Conservation {
        let queued = self.queue.clone().occupancy(now) as u64;
        Conservation {
            sent: self.flows.iter().map(|f| f.sender.stats.total_sent).sum(),
            on_access_link: self.on_access,
            dropped: self.queue.drops(),
            queued,
            propagating: self.in_bottleneck - queued,
            delivered: self.delivered,
        }
    }

    fn flow_of(&self, id: &AgentId) -> Option<usize> {
        self.flows.iter().position(|f| f.id == *id)
    }

    fn send_data(&mut self, i: usize, seq: u64, retransmit: bool, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        let flow = &mut self.flows[i];
        let at_router = flow.up.transmit(now, DATA_BYTES);
        let packet = Packet { flow: flow.index, seq, cum_ack: 0, is_ack: false, sent_at: now, retransmit };
        ctx.schedule(at_router, ROUTER, EventKind::PacketArrival, EventData::Packet(packet))?;
        self.on_access += 1;
        Ok(())
    }

    /// Sends whatever the window allows and keeps the retransmission timer
    /// armed.
    fn pump(&mut self, i: usize, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        if !self.flows[i].started {
            return Ok(());
        }
        while let Some(t) = self.flows[i].sender.next_to_send(now) {
            self.send_data(i, t.seq, t.retransmit, ctx)?;
        }
        self.flows[i].sender.mark_round(now);
        self.arm_timer(i, ctx)
    }

    fn arm_timer(&mut self, i: usize, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let flow = &mut self.flows[i];
        if flow.timer.is_some() {
            return Ok(());
        }
        if let Some(deadline) = flow.sender.rto_deadline() {
            let at = deadline.max(ctx.now());
            let target = sender_component(flow.index);
            flow.timer = Some(ctx.schedule(at, target, EventKind::Timer, EventData::None)?);
        }
        Ok(())
    }

    fn leave_slow_start(&mut self, i: usize, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        let flow = &mut self.flows[i];
        if flow.registered {
            return Ok(());
        }
        log::debug!("{} leaves slow start at {now} with cwnd {}", flow.id, flow.sender.cwnd());
        flow.registered = true;
        ctx.register_agent(flow.id.clone(), sender_component(flow.index))?;
        flow.sender.stats.begin_step(now);
        let len = flow.step_length(now);
        ctx.set_next_step(&flow.id, len)
    }

    fn on_ack(&mut self, i: usize, p: Packet, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let ack = Ack {
            next_expected: p.cum_ack,
            echo_seq: p.seq,
            echo_sent_at: p.sent_at,
            echo_retransmit: p.retransmit,
        };
        self.flows[i].sender.on_ack(ctx.now(), ack);
        if self.flows[i].sender.slow_start_finished() {
            self.leave_slow_start(i, ctx)?;
        }
        self.pump(i, ctx)
    }

    fn on_timer(&mut self, i: usize, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        self.flows[i].timer = None;
        self.flows[i].sender.on_timeout(ctx.now());
        if self.flows[i].sender.slow_start_finished() {
            self.leave_slow_start(i, ctx)?;
        }
        self.pump(i, ctx)
    }

    fn at_router(&mut self, p: Packet, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        self.on_access -= 1;
        match self.queue.enqueue(now) {
            Enqueue::Accepted { depart, .. } => {
                self.in_bottleneck += 1;
                ctx.schedule(
                    depart + self.forward_delay,
                    receiver_component(p.flow),
                    EventKind::PacketArrival,
                    EventData::Packet(p),
                )?;
            }
            Enqueue::Dropped => {
                let flow = &mut self.flows[p.flow as usize];
                flow.drops += 1;
                if self.first_drop.is_none() {
                    self.first_drop =
                        Some(DropRecord { time: now, flow: p.flow, in_flight: flow.sender.in_flight() });
                }
            }
        }
        Ok(())
    }

    fn at_receiver(&mut self, i: usize, p: Packet, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        self.in_bottleneck -= 1;
        self.delivered += 1;
        let flow = &mut self.flows[i];
        if p.seq == flow.rcv_next {
            flow.rcv_next += 1;
            while flow.rcv_out_of_order.remove(&flow.rcv_next) {
                flow.rcv_next += 1;
            }
        } else if p.seq > flow.rcv_next {
            flow.rcv_out_of_order.insert(p.seq);
        }
        let ack = Packet { cum_ack: flow.rcv_next, is_ack: true, ..p };
        let at_far_end = self.reverse.transmit(now, ACK_BYTES);
        let at_sender = flow.down.transmit(at_far_end, ACK_BYTES);
        ctx.schedule(at_sender, sender_component(p.flow), EventKind::PacketArrival, EventData::Packet(ack))?;
        Ok(())
    }

    fn sample(&mut self, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let now = ctx.now();
        let occupancy = self.queue.occupancy(now);
        for flow in self.flows.iter().filter(|f| f.started) {
            let s = &flow.sender;
            self.series.push(SeriesRow {
                t: now,
                flow: flow.index + 1,
                cwnd: s.cwnd(),
                srtt_ns: s.stats.srtt_ns().unwrap_or(0.0),
                in_flight: s.in_flight(),
                queue_occupancy: occupancy,
                acked: s.stats.total_acked,
                lost: s.stats.total_lost,
            });
        }
        if let Some(every) = self.sample_every {
            if self.flows.iter().any(|f| !f.is_finished()) {
                ctx.schedule_in(every, SAMPLER, EventKind::Timer, EventData::None)?;
            }
        }
        Ok(())
    }
}

impl Scenario for Dumbbell {
    fn handle_event(&mut self, ev: SimEvent, ctx: &mut SimContext<'_>) -> Result<Control, EnvError> {
        let unexpected = || EnvError::Scenario(format!("unexpected {} event for component {}", ev.kind, ev.target));
        match (ev.target, ev.kind, ev.payload.clone()) {
            (ROUTER, EventKind::PacketArrival, EventData::Packet(p)) => self.at_router(p, ctx)?,
            (SAMPLER, EventKind::Timer, _) => self.sample(ctx)?,
            (ComponentId(c), kind, payload) if c >= FIRST_FLOW_COMPONENT => {
                let offset = c - FIRST_FLOW_COMPONENT;
                let i = (offset / 2) as usize;
                if i >= self.flows.len() {
                    return Err(unexpected());
                }
                match (offset % 2 == 0, kind, payload) {
                    (true, EventKind::FlowStart, _) => {
                        self.flows[i].started = true;
                        self.flows[i].sender.stats.begin_step(ctx.now());
                        self.pump(i, ctx)?;
                    }
                    (true, EventKind::PacketArrival, EventData::Packet(p)) => self.on_ack(i, p, ctx)?,
                    (true, EventKind::Timer, _) => self.on_timer(i, ctx)?,
                    (false, EventKind::PacketArrival, EventData::Packet(p)) => self.at_receiver(i, p, ctx)?,
                    _ => return Err(unexpected()),
                }
            }
            _ => return Err(unexpected()),
        }
        Ok(Control::Continue)
    }

    fn agent_mut(&mut self, id: &AgentId) -> Option<&mut dyn RlAgent> {
        let i = self.flow_of(id)?;
        Some(&mut self.flows[i] as &mut dyn RlAgent)
    }

    fn on_action(&mut self, id: &AgentId, action: &ActionValue, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let i = self.flow_of(id).ok_or_else(|| EnvError::UnknownAgent(id.clone()))?;
        self.flows[i].set_action(action, ctx)?;
        self.pump(i, ctx)
    }

    fn expects_more_agents(&self) -> bool {
        self.flows.iter().any(|f| !f.registered && !f.sender.is_completed())
    }

    fn metrics(&mut self, _now: SimTime) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let bw = self.params.bandwidth_bps;
        let mut shares = Vec::new();
        for f in &self.flows {
            let share = if f.rl_secs > 0.0 { f.rl_bits / f.rl_secs / bw } else { 0.0 };
            m.insert(format!("{}_norm_throughput", f.id), share);
            m.insert(format!("{}_steps", f.id), f.episode.steps() as f64);
            shares.push(share);
        }
        m.insert("norm_throughput".into(), shares.iter().sum::<f64>() / shares.len() as f64);
        let accepted = self.queue.accepted();
        let mean_delay = if accepted > 0 {
            self.queue.total_queuing_delay().as_millis_f64() / accepted as f64
        } else {
            0.0
        };
        m.insert("mean_queue_delay_ms".into(), mean_delay);
        let offered = accepted + self.queue.drops();
        let loss = if offered > 0 { self.queue.drops() as f64 / offered as f64 } else { 0.0 };
        m.insert("loss_rate".into(), loss);
        m.insert("bandwidth_mbps".into(), bw / 1e6);
        m.insert("rtt_ms".into(), self.params.rtt.as_millis_f64());
        m.insert("buffer_pkts".into(), self.params.buffer_pkts as f64);
        m
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Clone, Debug)]
pub struct DumbbellFactory {
    config: DumbbellConfig,
    agent: CcConfig,
}

impl DumbbellFactory {
    pub fn new(config: DumbbellConfig, agent: CcConfig) -> Self {
        DumbbellFactory { config, agent }
    }

    pub fn config(&self) -> &DumbbellConfig {
        &self.config
    }
}

impl ScenarioFactory for DumbbellFactory {
    fn spaces(&self) -> SpaceDescriptor {
        spaces()
    }

    fn build(&self, ctx: &mut SimContext<'_>) -> Result<Box<dyn Scenario>, EnvError> {
        let c = &self.config;
        let mut rng = ctx.rng("network-params");
        let params = NetworkParams {
            bandwidth_bps: c.bandwidth_mbps.sample(&mut rng) * 1e6,
            rtt: SimTime::from_secs_f64(c.rtt_ms.sample(&mut rng) / 1e3)
                .ok_or_else(|| EnvError::Scenario("rtt out of range".into()))?,
            buffer_pkts: c.buffer_pkts.sample(&mut rng).round() as usize,
            access_bps: c.access_bandwidth_mbps * 1e6,
        };
        let forward_delay = SimTime::from_nanos(params.rtt.as_nanos() / 2);
        let reverse_delay = params.rtt - forward_delay;
        let access = LinkParams::new(params.access_bps, SimTime::ZERO);
        let mut flows = Vec::with_capacity(c.flows.len());
        for (i, spec) in c.flows.iter().enumerate() {
            let index = i as u32;
            let start = SimTime::from_secs_f64(spec.start_s)
                .ok_or_else(|| EnvError::Scenario(format!("flow {} start out of range", i + 1)))?;
            flows.push(Flow {
                index,
                id: flow_agent_id(index),
                start,
                sender: Sender::new(
                    self.agent.initial_cwnd_pkts,
                    self.agent.ssthresh_pkts,
                    spec.size_pkts.packets(),
                    DATA_BYTES,
                ),
                up: Link::new(access),
                down: Link::new(access),
                rcv_next: 0,
                rcv_out_of_order: BTreeSet::new(),
                episode: CcEpisode::new(&self.agent),
                cfg: self.agent.clone(),
                report: None,
                last_snapshot: None,
                registered: false,
                started: false,
                timer: None,
                fallback_rtt: params.rtt,
                rl_bits: 0.0,
                rl_secs: 0.0,
                drops: 0,
                last_pacing: None,
            });
            ctx.schedule(start, sender_component(index), EventKind::FlowStart, EventData::None)?;
        }
        let sample_every = c
            .sample_interval_ms
            .map(|ms| SimTime::from_secs_f64(ms / 1e3).unwrap_or(SimTime::from_millis(1)).max(SimTime::from_nanos(1)));
        if sample_every.is_some() {
            ctx.schedule(SimTime::ZERO, SAMPLER, EventKind::Timer, EventData::None)?;
        }
        log::debug!(
            "dumbbell: {:.1} Mbps, rtt {}, buffer {} pkts, {} flows",
            params.bandwidth_bps / 1e6,
            params.rtt,
            params.buffer_pkts,
            flows.len()
        );
        Ok(Box::new(Dumbbell {
            params,
            queue: BottleneckQueue::new(params.buffer_pkts, params.serialisation()),
            forward_delay,
            reverse: Link::new(LinkParams::new(params.bandwidth_bps, reverse_delay)),
            flows,
            sample_every,
            series: Vec::new(),
            on_access: 0,
            in_bottleneck: 0,
            delivered: 0,
            first_drop: None,
        }))
    }
}
