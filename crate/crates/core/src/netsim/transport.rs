//! Sliding-window reliable sender with slow start and an externally set
//! congestion window.
//!
//! Every ack carries the cumulative ack plus the sequence number of the
//! segment that triggered it, so the sender keeps a scoreboard of segments
//! received above the cumulative point. A hole is declared lost once
//! [`DUP_ACK_THRESHOLD`] segments sent after it have been acknowledged (for a
//! single hole that is exactly the third duplicate ack). Lost segments are
//! retransmitted ahead of new data, within the window. A retransmission
//! timeout backs this up for tail and repeated losses.
//!
//! The sender keeps no timers or links of its own; the owning network asks
//! [`Sender::next_to_send`] what to put on the wire and schedules the
//! timer at [`Sender::rto_deadline`].

use std::collections::BTreeSet;

use crate::netsim::stats::FlowStats;
use crate::time::SimTime;

/// Later segments that must be acknowledged before a hole counts as lost.
pub const DUP_ACK_THRESHOLD: usize = 3;
/// Floor of the retransmission timeout.
pub const MIN_RTO: SimTime = SimTime::from_millis(10);
/// Retransmission timeout before the first RTT sample.
pub const INITIAL_RTO: SimTime = SimTime::from_millis(1_000);
const MAX_BACKOFF: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SlowStart,
    RlControlled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlowStartExit {
    Threshold,
    Loss,
}

/// Side effects of processing one ack.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AckOutcome {
    pub newly_acked: u64,
    /// Holes newly declared lost by this ack.
    pub losses: u64,
    pub slow_start_exit: Option<SlowStartExit>,
    pub rtt_sample: Option<SimTime>,
}

/// An ack as seen by the sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ack {
    /// Cumulative: every sequence number below this has been received.
    pub next_expected: u64,
    /// Sequence number of the data segment that triggered this ack.
    pub echo_seq: u64,
    /// Send time of that segment.
    pub echo_sent_at: SimTime,
    /// Whether that segment was a retransmission (no RTT sample then).
    pub echo_retransmit: bool,
}

/// A segment the sender wants on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub seq: u64,
    pub retransmit: bool,
}

#[derive(Clone, Debug)]
pub struct Sender {
    pub stats: FlowStats,
    cwnd: f64,
    phase: Phase,
    ssthresh: f64,
    next_seq: u64,
    snd_una: u64,
    /// Received above `snd_una`.
    sacked: BTreeSet<u64>,
    /// Declared lost and waiting for retransmission.
    lost: BTreeSet<u64>,
    /// Retransmitted and not yet acknowledged.
    retransmitted: BTreeSet<u64>,
    /// Holes below this have already been examined for loss.
    loss_scan: u64,
    /// After a loss exit: slow start is only over once everything sent
    /// before the exit has been acknowledged.
    recovery_end: Option<u64>,
    size: Option<u64>,
    stopped: bool,
    last_progress: SimTime,
    backoff: u32,
    clamped_cwnd_requests: u64,
    round_end: Option<u64>,
    round_start: SimTime,
    round_acked: u64,
    slow_start_rounds: Vec<(SimTime, f64)>,
    packet_bits: f64,
}

impl Sender {
    pub fn new(initial_cwnd: f64, ssthresh: f64, size: Option<u64>, packet_bytes: u32) -> Self {
        Sender {
            stats: FlowStats::new(packet_bytes),
            cwnd: initial_cwnd.max(1.0),
            phase: Phase::SlowStart,
            ssthresh,
            next_seq: 0,
            snd_una: 0,
            sacked: BTreeSet::new(),
            lost: BTreeSet::new(),
            retransmitted: BTreeSet::new(),
            loss_scan: 0,
            recovery_end: None,
            size,
            stopped: false,
            last_progress: SimTime::ZERO,
            backoff: 0,
            clamped_cwnd_requests: 0,
            round_end: None,
            round_start: SimTime::ZERO,
            round_acked: 0,
            slow_start_rounds: Vec::new(),
            packet_bits: packet_bytes as f64 * 8.0,
        }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Segments believed to be in the network: sent, not acknowledged in
    /// any way, and not declared lost.
    pub fn in_flight(&self) -> u64 {
        self.outstanding() - self.sacked.len() as u64 - self.lost.len() as u64
    }

    /// Segments sent but not cumulatively acknowledged.
    pub fn outstanding(&self) -> u64 {
        self.next_seq - self.snd_una
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn size(&self) -> Option<u64> {
        self.size
    }

    pub fn is_completed(&self) -> bool {
        self.size.is_some_and(|s| self.snd_una >= s)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Stops sending new data; outstanding segments are still repaired.
    pub fn stop(&mut self) {
        self.stopped = true;
    }

    /// Number of `set_cwnd` requests below one packet that were clamped.
    pub fn clamped_cwnd_requests(&self) -> u64 {
        self.clamped_cwnd_requests
    }

    /// `(time, cwnd)` at the end of every slow-start round trip.
    pub fn slow_start_rounds(&self) -> &[(SimTime, f64)] {
        &self.slow_start_rounds
    }

    fn window(&self) -> u64 {
        // The epsilon keeps 2^a * (w / 2^a) from landing just under w.
        (self.cwnd + 1e-9).floor().max(1.0) as u64
    }

    /// Fixes the window. Requests below one packet are clamped to one.
    pub fn set_cwnd(&mut self, cwnd: f64) {
        if cwnd.is_nan() || cwnd < 1.0 {
            self.clamped_cwnd_requests += 1;
            log::warn!("congestion window {cwnd} clamped to 1 packet");
            self.cwnd = 1.0;
        } else {
            self.cwnd = cwnd;
        }
    }

    /// Ends slow start. Returns false if it had already ended.
    pub fn end_slow_start(&mut self, reason: SlowStartExit) -> bool {
        if self.phase != Phase::SlowStart {
            return false;
        }
        self.phase = Phase::RlControlled;
        if reason == SlowStartExit::Loss {
            self.cwnd = (self.cwnd / 2.0).max(1.0);
            self.recovery_end = Some(self.next_seq);
        }
        true
    }

    /// Whether slow start has ended and, after a loss exit, the losses it
    /// caused have been repaired. Measurements taken before this point
    /// describe slow start, not the window the agent will control.
    pub fn slow_start_finished(&self) -> bool {
        self.phase == Phase::RlControlled && self.recovery_end.is_none_or(|end| self.snd_una >= end)
    }

    /// The next segment the window allows, if any: a lost one first, else new
    /// data. The segment is counted as sent.
    pub fn next_to_send(&mut self, now: SimTime) -> Option<Transmission> {
        if self.in_flight() >= self.window() {
            return None;
        }
        if self.outstanding() == 0 {
            // Timer restarts when data goes out into an empty pipe.
            self.last_progress = now;
        }
        if let Some(seq) = self.lost.pop_first() {
            self.retransmitted.insert(seq);
            self.stats.on_sent();
            return Some(Transmission { seq, retransmit: true });
        }
        if self.stopped || self.size.is_some_and(|s| self.next_seq >= s) {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.stats.on_sent();
        Some(Transmission { seq, retransmit: false })
    }

    /// Call after a burst of sends; starts the next slow-start round if one
    /// just closed.
    pub fn mark_round(&mut self, now: SimTime) {
        if self.phase == Phase::SlowStart && self.round_end.is_none() {
            self.round_end = Some(self.next_seq);
            self.round_start = now;
            self.round_acked = 0;
        }
    }

    fn declare_lost(&mut self, seq: u64) {
        self.lost.insert(seq);
        self.stats.on_loss();
    }

    pub fn on_ack(&mut self, now: SimTime, ack: Ack) -> AckOutcome {
        let mut out = AckOutcome::default();
        let cum = ack.next_expected.min(self.next_seq);
        if cum > self.snd_una {
            let before = self.sacked.len();
            self.sacked = self.sacked.split_off(&cum);
            let already = (before - self.sacked.len()) as u64;
            out.newly_acked += cum - self.snd_una - already;
            self.lost = self.lost.split_off(&cum);
            self.retransmitted = self.retransmitted.split_off(&cum);
            self.snd_una = cum;
            // Only cumulative progress restarts the timer, so a hole whose
            // retransmission was lost as well still times out.
            self.backoff = 0;
            self.last_progress = now;
        }
        if ack.echo_seq >= self.snd_una && ack.echo_seq < self.next_seq && self.sacked.insert(ack.echo_seq) {
            out.newly_acked += 1;
            // A segment declared lost turned up after all.
            self.lost.remove(&ack.echo_seq);
            self.retransmitted.remove(&ack.echo_seq);
        }
        if out.newly_acked == 0 {
            return out;
        }
        self.stats.on_acked(out.newly_acked);
        if !ack.echo_retransmit {
            let rtt = now.saturating_sub(ack.echo_sent_at);
            self.stats.on_rtt_sample(now, rtt);
            out.rtt_sample = Some(rtt);
        }

        if let Some(&third) = self.sacked.iter().rev().nth(DUP_ACK_THRESHOLD - 1) {
            for seq in self.loss_scan.max(self.snd_una)..third {
                if !self.sacked.contains(&seq)
                    && !self.lost.contains(&seq)
                    && !self.retransmitted.contains(&seq)
                {
                    self.declare_lost(seq);
                    out.losses += 1;
                }
            }
            self.loss_scan = self.loss_scan.max(third);
        }

        if self.phase == Phase::SlowStart {
            if out.losses > 0 {
                self.end_slow_start(SlowStartExit::Loss);
                out.slow_start_exit = Some(SlowStartExit::Loss);
                return out;
            }
            self.round_acked += out.newly_acked;
            self.cwnd += 1.0;
            if self.round_end.is_some_and(|end| self.snd_una >= end) {
                let elapsed = now.saturating_sub(self.round_start);
                if elapsed > SimTime::ZERO {
                    let bps = self.round_acked as f64 * self.packet_bits / elapsed.as_secs_f64();
                    self.stats.observe_throughput(bps);
                }
                self.slow_start_rounds.push((now, self.cwnd));
                self.round_end = None;
            }
            if self.cwnd >= self.ssthresh && self.end_slow_start(SlowStartExit::Threshold) {
                out.slow_start_exit = Some(SlowStartExit::Threshold);
            }
        }
        out
    }

    pub fn rto(&self) -> SimTime {
        let base = match self.stats.srtt_ns() {
            Some(srtt) => SimTime::from_nanos((2.0 * srtt).round() as u64).max(MIN_RTO),
            None => INITIAL_RTO,
        };
        base.checked_mul(1 << self.backoff).unwrap_or(SimTime::MAX)
    }

    /// When the retransmission timer expires, or `None` if nothing is
    /// outstanding.
    pub fn rto_deadline(&self) -> Option<SimTime> {
        if self.outstanding() == 0 {
            return None;
        }
        Some(self.last_progress.checked_add(self.rto()).unwrap_or(SimTime::MAX))
    }

    /// Handles the timer firing at `now`. When it has really expired, every
    /// unacknowledged segment is queued for retransmission. Returns whether
    /// it expired, and whether slow start ended because of it.
    pub fn on_timeout(&mut self, now: SimTime) -> Option<Option<SlowStartExit>> {
        let deadline = self.rto_deadline()?;
        if now < deadline {
            return None;
        }
        // Everything not known to have arrived is presumed gone, so the
        // window restarts from an empty pipe. Only the head counts as a loss.
        if !self.lost.contains(&self.snd_una) {
            self.declare_lost(self.snd_una);
        }
        for seq in self.snd_una..self.next_seq {
            if !self.sacked.contains(&seq) {
                self.lost.insert(seq);
            }
        }
        self.retransmitted.clear();
        self.loss_scan = self.next_seq;
        self.backoff = (self.backoff + 1).min(MAX_BACKOFF);
        self.last_progress = now;
        if self.end_slow_start(SlowStartExit::Loss) {
            return Some(Some(SlowStartExit::Loss));
        }
        if !self.slow_start_finished() {
            // Still repairing slow start's overshoot with nobody steering the
            // window. Without a further cut a window that overfills the queue
            // keeps dropping the head's retransmission and recovery never ends.
            self.cwnd = (self.cwnd / 2.0).max(1.0);
        }
        Some(None)
    }
}
