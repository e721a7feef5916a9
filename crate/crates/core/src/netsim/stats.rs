//! Per-flow measurements: RTT estimators and per-step counters.

use std::collections::VecDeque;

use crate::time::SimTime;

/// Gain of the smoothed-RTT moving average.
pub const SRTT_GAIN: f64 = 1.0 / 8.0;

/// Span of the trailing minimum-RTT window used to pace RL steps.
pub const MIN_RTT_WINDOW: SimTime = SimTime::from_millis(10_000);

/// Sliding-window minimum over timestamped samples (monotonic deque).
#[derive(Clone, Debug)]
pub struct WindowedMin {
    span: SimTime,
    samples: VecDeque<(SimTime, SimTime)>,
}

impl WindowedMin {
    pub fn new(span: SimTime) -> Self {
        WindowedMin { span, samples: VecDeque::new() }
    }

    pub fn push(&mut self, now: SimTime, value: SimTime) {
        while self.samples.back().is_some_and(|&(_, v)| v >= value) {
            self.samples.pop_back();
        }
        self.samples.push_back((now, value));
        self.expire(now);
    }

    fn expire(&mut self, now: SimTime) {
        while let Some(&(t, _)) = self.samples.front() {
            if t.checked_add(self.span).is_some_and(|end| end < now) {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn get(&mut self, now: SimTime) -> Option<SimTime> {
        self.expire(now);
        self.samples.front().map(|&(_, v)| v)
    }
}

/// Everything measured over one RL step, plus the long-lived estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSnapshot {
    pub duration: SimTime,
    /// Goodput over the step, bits/s.
    pub throughput_bps: f64,
    /// Largest throughput seen since flow start (including this step).
    pub max_throughput_bps: f64,
    /// Smoothed RTT in nanoseconds.
    pub srtt_ns: f64,
    pub min_rtt: SimTime,
    pub max_rtt: SimTime,
    pub windowed_min_rtt: SimTime,
    /// Inferred losses over transmissions, in `[0, 1]`.
    pub loss_ratio: f64,
    pub acked: u64,
    pub sent: u64,
    pub lost: u64,
}

#[derive(Clone, Debug)]
pub struct FlowStats {
    packet_bits: f64,
    srtt_ns: Option<f64>,
    min_rtt: Option<SimTime>,
    max_rtt: Option<SimTime>,
    windowed: WindowedMin,
    max_throughput_bps: f64,
    step_start: SimTime,
    step_acked: u64,
    step_sent: u64,
    step_lost: u64,
    pub total_acked: u64,
    pub total_sent: u64,
    pub total_lost: u64,
}

impl FlowStats {
    pub fn new(packet_bytes: u32) -> Self {
        FlowStats {
            packet_bits: packet_bytes as f64 * 8.0,
            srtt_ns: None,
            min_rtt: None,
            max_rtt: None,
            windowed: WindowedMin::new(MIN_RTT_WINDOW),
            max_throughput_bps: 0.0,
            step_start: SimTime::ZERO,
            step_acked: 0,
            step_sent: 0,
            step_lost: 0,
            total_acked: 0,
            total_sent: 0,
            total_lost: 0,
        }
    }

    pub fn on_rtt_sample(&mut self, now: SimTime, rtt: SimTime) {
        let x = rtt.as_nanos() as f64;
        self.srtt_ns = Some(match self.srtt_ns {
            None => x,
            Some(s) => s + SRTT_GAIN * (x - s),
        });
        self.min_rtt = Some(self.min_rtt.map_or(rtt, |m| m.min(rtt)));
        self.max_rtt = Some(self.max_rtt.map_or(rtt, |m| m.max(rtt)));
        self.windowed.push(now, rtt);
    }

    pub fn on_acked(&mut self, packets: u64) {
        self.step_acked += packets;
        self.total_acked += packets;
    }

    pub fn on_sent(&mut self) {
        self.step_sent += 1;
        self.total_sent += 1;
    }

    pub fn on_loss(&mut self) {
        self.step_lost += 1;
        self.total_lost += 1;
    }

    /// Folds an externally measured rate (e.g. a slow-start round) into the
    /// maximum-throughput estimate.
    pub fn observe_throughput(&mut self, bps: f64) {
        if bps.is_finite() && bps > self.max_throughput_bps {
            self.max_throughput_bps = bps;
        }
    }

    pub fn srtt_ns(&self) -> Option<f64> {
        self.srtt_ns
    }

    pub fn min_rtt(&self) -> Option<SimTime> {
        self.min_rtt
    }

    pub fn max_rtt(&self) -> Option<SimTime> {
        self.max_rtt
    }

    pub fn max_throughput_bps(&self) -> f64 {
        self.max_throughput_bps
    }

    /// Minimum RTT over the trailing window; falls back to the all-time
    /// minimum when no sample is recent enough.
    pub fn windowed_min_rtt(&mut self, now: SimTime) -> Option<SimTime> {
        self.windowed.get(now).or(self.min_rtt)
    }

    /// Restarts the per-step counters without producing a snapshot.
    pub fn begin_step(&mut self, now: SimTime) {
        self.step_start = now;
        self.step_acked = 0;
        self.step_sent = 0;
        self.step_lost = 0;
    }

    /// Closes the current step: reports its measurements and zeroes the
    /// per-step counters.
    pub fn snapshot(&mut self, now: SimTime) -> StepSnapshot {
        let duration = now.saturating_sub(self.step_start);
        let throughput_bps = if duration > SimTime::ZERO {
            self.step_acked as f64 * self.packet_bits / duration.as_secs_f64()
        } else {
            0.0
        };
        self.observe_throughput(throughput_bps);
        let loss_ratio = if self.step_sent == 0 {
            0.0
        } else {
            (self.step_lost as f64 / self.step_sent as f64).min(1.0)
        };
        let min_rtt = self.min_rtt.unwrap_or(SimTime::ZERO);
        let snap = StepSnapshot {
            duration,
            throughput_bps,
            max_throughput_bps: self.max_throughput_bps,
            srtt_ns: self.srtt_ns.unwrap_or(min_rtt.as_nanos() as f64),
            min_rtt,
            max_rtt: self.max_rtt.unwrap_or(SimTime::ZERO),
            windowed_min_rtt: self.windowed_min_rtt(now).unwrap_or(SimTime::ZERO),
            loss_ratio,
            acked: self.step_acked,
            sent: self.step_sent,
            lost: self.step_lost,
        };
        self.begin_step(now);
        snap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(x: u64) -> SimTime {
        SimTime::from_millis(x)
    }

    #[test]
    fn throughput_of_thousand_full_packets_in_100ms() {
        let mut s = FlowStats::new(1500);
        s.begin_step(SimTime::ZERO);
        s.on_acked(1000);
        let snap = s.snapshot(ms(100));
        assert!((snap.throughput_bps - 120e6).abs() < 1e-6);
        assert_eq!(snap.max_throughput_bps, snap.throughput_bps);
    }

    #[test]
    fn idle_step_reports_zero() {
        let mut s = FlowStats::new(1500);
        s.begin_step(SimTime::ZERO);
        let snap = s.snapshot(ms(50));
        assert_eq!(snap.throughput_bps, 0.0);
        assert_eq!(snap.loss_ratio, 0.0);
    }

    #[test]
    fn loss_ratio_is_losses_over_sent() {
        let mut s = FlowStats::new(1500);
        s.begin_step(SimTime::ZERO);
        for _ in 0..500 {
            s.on_sent();
        }
        for _ in 0..5 {
            s.on_loss();
        }
        let snap = s.snapshot(ms(10));
        assert!((snap.loss_ratio - 0.01).abs() < 1e-15);
    }

    #[test]
    fn snapshot_resets_step_counters() {
        let mut s = FlowStats::new(1500);
        s.on_sent();
        s.on_acked(1);
        s.snapshot(ms(1));
        let snap = s.snapshot(ms(2));
        assert_eq!((snap.sent, snap.acked), (0, 0));
        assert_eq!(s.total_sent, 1);
    }

    #[test]
    fn srtt_is_an_eighth_gain_ewma() {
        let mut s = FlowStats::new(1500);
        s.on_rtt_sample(ms(0), ms(40));
        s.on_rtt_sample(ms(1), ms(48));
        assert_eq!(s.srtt_ns(), Some(41e6));
        assert_eq!(s.min_rtt(), Some(ms(40)));
        assert_eq!(s.max_rtt(), Some(ms(48)));
    }

    #[test]
    fn windowed_min_forgets_old_samples() {
        let mut w = WindowedMin::new(ms(10_000));
        w.push(ms(0), ms(30));
        w.push(ms(5_000), ms(50));
        assert_eq!(w.get(ms(9_000)), Some(ms(30)));
        assert_eq!(w.get(ms(10_001)), Some(ms(50)));
        w.push(ms(11_000), ms(40));
        assert_eq!(w.get(ms(11_000)), Some(ms(40)));
        assert_eq!(w.get(ms(30_000)), None);
    }

    #[test]
    fn windowed_min_falls_back_to_lifetime_min() {
        let mut s = FlowStats::new(1500);
        s.on_rtt_sample(ms(0), ms(30));
        assert_eq!(s.windowed_min_rtt(ms(60_000)), Some(ms(30)));
    }
}
