//! The discrete-event kernel: clock, future event set and dispatch loop.
//!
//! Events are totally ordered by `(timestamp, sequence)`, where the sequence
//! is a per-kernel insertion counter. Two events scheduled for the same
//! instant therefore run in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::rng::RngStream;
use crate::time::SimTime;

/// Identifies the component an event is delivered to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId(pub u32);

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Timer,
    PacketArrival,
    Step,
    FlowStart,
    FlowEnd,
    Custom(u16),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Timer => f.write_str("TIMER"),
            EventKind::PacketArrival => f.write_str("PACKET_ARRIVAL"),
            EventKind::Step => f.write_str("STEP"),
            EventKind::FlowStart => f.write_str("FLOW_START"),
            EventKind::FlowEnd => f.write_str("FLOW_END"),
            EventKind::Custom(c) => write!(f, "CUSTOM_{c}"),
        }
    }
}

/// A unit of simulated work. The payload is owned by the event and moves to
/// the target component on dispatch.
#[derive(Clone, Debug)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub target: ComponentId,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> Event<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.time, self.seq)
    }
}

/// Returned by [`Kernel::schedule`]; permits cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.key() == other.0.key()
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the smallest key sits on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.key().cmp(&self.0.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DesError {
    #[error("cannot schedule at {at} when the clock reads {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("simulated time overflow")]
    TimeOverflow,
}

/// A component failure, tagged with the event that caused it.
#[derive(Debug, Error)]
#[error("dispatching {kind} (seq {seq}) to component {target} at {time}: {source}")]
pub struct DispatchError<E: std::error::Error + 'static> {
    pub time: SimTime,
    pub seq: u64,
    pub target: ComponentId,
    pub kind: EventKind,
    #[source]
    pub source: E,
}

/// What the dispatcher wants the loop to do after handling an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    /// A model-specific terminal state was reached; stop without popping more.
    Halt,
}

#[derive(Debug)]
pub enum RunOutcome<P> {
    /// The predicate matched this event; it was popped but not dispatched.
    Matched(Event<P>),
    /// No events remain.
    Exhausted,
    /// The dispatcher returned [`Control::Halt`].
    Halted,
}

/// One line of the event trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    pub target: ComponentId,
    pub kind: EventKind,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.time.as_nanos(), self.seq, self.target, self.kind)
    }
}

enum TraceSink {
    Memory(Vec<TraceRecord>),
    Writer(Box<dyn Write + Send>),
}

/// Pending-event bitmap indexed by sequence number.
#[derive(Default)]
struct LiveSet {
    words: Vec<u64>,
}

impl LiveSet {
    fn insert(&mut self, seq: u64) {
        let (w, b) = ((seq / 64) as usize, seq % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    fn remove(&mut self, seq: u64) -> bool {
        let (w, b) = ((seq / 64) as usize, seq % 64);
        match self.words.get_mut(w) {
            Some(word) if *word & (1 << b) != 0 => {
                *word &= !(1 << b);
                true
            }
            _ => false,
        }
    }

    fn contains(&self, seq: u64) -> bool {
        let (w, b) = ((seq / 64) as usize, seq % 64);
        self.words.get(w).is_some_and(|word| word & (1 << b) != 0)
    }
}

/// A single-threaded discrete-event kernel.
///
/// The kernel owns the clock and the future event set. It does not own the
/// components; [`Kernel::run_until`] hands each event to a caller-supplied
/// dispatcher, which receives the kernel back so it can schedule follow-up
/// events.
pub struct Kernel<P> {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    live: LiveSet,
    pending: usize,
    seed: u64,
    trace: Option<TraceSink>,
}

impl<P> Kernel<P> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            clock: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: LiveSet::default(),
            pending: 0,
            seed,
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of events still pending (cancelled events excluded).
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn is_empty(&self) -> bool {
        self.pending == 0
    }

    /// A random stream derived from the root seed and `id`.
    pub fn rng(&self, id: &str) -> RngStream {
        RngStream::new(self.seed, id)
    }

    /// Keeps every popped event in memory; see [`Kernel::trace_records`].
    pub fn record_trace(&mut self) {
        self.trace = Some(TraceSink::Memory(Vec::new()));
    }

    /// Streams `timestamp_ns,sequence,target,kind` lines to `out`.
    pub fn trace_to(&mut self, out: Box<dyn Write + Send>) {
        self.trace = Some(TraceSink::Writer(out));
    }

    pub fn trace_records(&self) -> &[TraceRecord] {
        match &self.trace {
            Some(TraceSink::Memory(v)) => v,
            _ => &[],
        }
    }

    pub fn flush_trace(&mut self) -> std::io::Result<()> {
        if let Some(TraceSink::Writer(w)) = &mut self.trace {
            w.flush()?;
        }
        Ok(())
    }

    pub fn schedule(
        &mut self,
        time: SimTime,
        target: ComponentId,
        kind: EventKind,
        payload: P,
    ) -> Result<EventHandle, DesError> {
        if time < self.clock {
            return Err(DesError::SchedulingInPast { at: time, now: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.pending += 1;
        self.heap.push(Entry(Event { time, seq, target, kind, payload }));
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current clock.
    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: ComponentId,
        kind: EventKind,
        payload: P,
    ) -> Result<EventHandle, DesError> {
        let at = self.clock.checked_add(delay).ok_or(DesError::TimeOverflow)?;
        self.schedule(at, target, kind, payload)
    }

    /// Removes a pending event. Returns `false` if it already ran or was
    /// already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let removed = self.live.remove(handle.0);
        if removed {
            self.pending -= 1;
        }
        removed
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.live.contains(handle.0)
    }

    fn discard_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.live.contains(top.0.seq) {
                break;
            }
            self.heap.pop();
        }
    }

    /// Timestamp of the next pending event.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.discard_cancelled();
        self.heap.peek().map(|e| e.0.time)
    }

    pub fn peek(&mut self) -> Option<&Event<P>> {
        self.discard_cancelled();
        self.heap.peek().map(|e| &e.0)
    }

    /// Pops the next event and advances the clock to its timestamp.
    pub fn pop(&mut self) -> Option<Event<P>> {
        self.discard_cancelled();
        let Entry(ev) = self.heap.pop()?;
        self.live.remove(ev.seq);
        self.pending -= 1;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        self.record(&ev);
        Some(ev)
    }

    fn record(&mut self, ev: &Event<P>) {
        match &mut self.trace {
            None => {}
            Some(TraceSink::Memory(v)) => v.push(TraceRecord {
                time: ev.time,
                seq: ev.seq,
                target: ev.target,
                kind: ev.kind,
            }),
            Some(TraceSink::Writer(w)) => {
                // Trace output is diagnostic; a failing sink must not abort the run.
                let _ = writeln!(w, "{},{},{},{}", ev.time.as_nanos(), ev.seq, ev.target, ev.kind);
            }
        }
    }

    /// Pops and dispatches events in order until `matches` accepts one (which
    /// is returned undispatched), the queue empties, or the dispatcher halts.
    pub fn run_until<E, M, D>(
        &mut self,
        mut matches: M,
        mut dispatch: D,
    ) -> Result<RunOutcome<P>, DispatchError<E>>
    where
        E: std::error::Error + 'static,
        M: FnMut(&Event<P>) -> bool,
        D: FnMut(&mut Self, Event<P>) -> Result<Control, E>,
    {
        while let Some(ev) = self.pop() {
            if matches(&ev) {
                return Ok(RunOutcome::Matched(ev));
            }
            let (time, seq, target, kind) = (ev.time, ev.seq, ev.target, ev.kind);
            match dispatch(self, ev) {
                Ok(Control::Continue) => {}
                Ok(Control::Halt) => return Ok(RunOutcome::Halted),
                Err(source) => {
                    return Err(DispatchError { time, seq, target, kind, source });
                }
            }
        }
        Ok(RunOutcome::Exhausted)
    }

    /// Pops every pending event stamped exactly `time` that satisfies
    /// `matches`, leaving the rest queued in their original order. Used to
    /// coalesce simultaneous events; the clock must already read `time`.
    pub fn take_simultaneous<M>(&mut self, time: SimTime, mut matches: M) -> Vec<Event<P>>
    where
        M: FnMut(&Event<P>) -> bool,
    {
        assert_eq!(time, self.clock, "can only coalesce events at the current instant");
        let mut taken = Vec::new();
        let mut kept = Vec::new();
        loop {
            self.discard_cancelled();
            match self.heap.peek() {
                Some(top) if top.0.time == time => {}
                _ => break,
            }
            let Entry(ev) = self.heap.pop().expect("peeked");
            if matches(&ev) {
                self.live.remove(ev.seq);
                self.pending -= 1;
                self.record(&ev);
                taken.push(ev);
            } else {
                kept.push(Entry(ev));
            }
        }
        self.heap.extend(kept);
        taken
    }
}

impl<P> fmt::Debug for Kernel<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("clock", &self.clock)
            .field("pending", &self.pending)
            .field("next_seq", &self.next_seq)
            .field("seed", &self.seed)
            .finish()
    }
}
