//! The congestion-control agent: window multiplier actions, the four-feature
//! observation and the delay-aware reward.
//!
//! Everything here is a pure function of a [`StepSnapshot`] plus a little
//! episode bookkeeping; the flow that owns the agent feeds it measurements and
//! applies the resulting window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::stats::StepSnapshot;

pub const ALPHA_MIN: f64 = -2.0;
pub const ALPHA_MAX: f64 = 2.0;

/// Relative tolerance for treating the smoothed RTT as equal to the minimum.
pub const MIN_RTT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcConfig {
    /// A step whose loss ratio reaches this ends the episode.
    pub loss_done_threshold: f64,
    pub max_steps: u64,
    pub ssthresh_pkts: f64,
    pub cwnd_cap_pkts: f64,
    /// Step length as a multiple of the windowed minimum RTT.
    pub step_rtt_multiplier: f64,
    pub initial_cwnd_pkts: f64,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            loss_done_threshold: 0.5,
            max_steps: 400,
            ssthresh_pkts: 64.0,
            cwnd_cap_pkts: 65_536.0,
            step_rtt_multiplier: 2.0,
            initial_cwnd_pkts: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("window exponent {0} outside [-2, 2]")]
pub struct OutOfRange(pub f64);

/// The exponent `alpha` of a window update `cwnd <- 2^alpha * cwnd`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcAction(f64);

impl CcAction {
    pub fn new(alpha: f64) -> Result<Self, OutOfRange> {
        if (ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
            Ok(CcAction(alpha))
        } else {
            Err(OutOfRange(alpha))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// `2^alpha * cwnd`, clamped to `[1, cap]`.
pub fn apply_action(cwnd: f64, action: CcAction, cap: f64) -> f64 {
    (action.0.exp2() * cwnd).clamp(1.0, cap)
}

/// Min-max normalised smoothed RTT, clamped to `[0, 1]`; zero when no RTT
/// spread has been observed yet.
pub fn normalised_delay(srtt: f64, min_rtt: f64, max_rtt: f64) -> f64 {
    if max_rtt <= min_rtt {
        return 0.0;
    }
    ((srtt - min_rtt) / (max_rtt - min_rtt)).clamp(0.0, 1.0)
}

fn throughput_ratio(snap: &StepSnapshot) -> f64 {
    if snap.max_throughput_bps > 0.0 {
        (snap.throughput_bps / snap.max_throughput_bps).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// `[R/R_max, normalised srtt, loss ratio, log2(cwnd)/log2(cap)]`.
pub fn observation(snap: &StepSnapshot, cwnd: f64, cwnd_cap: f64) -> [f64; 4] {
    let d_tilde =
        normalised_delay(snap.srtt_ns, snap.min_rtt.as_nanos() as f64, snap.max_rtt.as_nanos() as f64);
    let cwnd_feature = (cwnd.max(1.0).log2() / cwnd_cap.log2()).clamp(0.0, 1.0);
    [throughput_ratio(snap), d_tilde, snap.loss_ratio.clamp(0.0, 1.0), cwnd_feature]
}

/// The step reward from raw measurements.
///
/// ```text
/// x = R/R_max - L
/// r = x                                   if x < 1 and d = d_min
/// r = x * (d_min / d) * (1 - d~)          otherwise
/// ```
/// RTTs may be in any unit as long as it is shared.
pub fn reward_from(ratio: f64, loss: f64, srtt: f64, min_rtt: f64, max_rtt: f64) -> f64 {
    let x = ratio - loss;
    let at_min = srtt <= min_rtt * (1.0 + MIN_RTT_TOLERANCE);
    if x < 1.0 && at_min {
        return x;
    }
    let delay_ratio = if srtt > 0.0 { min_rtt / srtt } else { 1.0 };
    x * delay_ratio * (1.0 - normalised_delay(srtt, min_rtt, max_rtt))
}

pub fn reward(snap: &StepSnapshot) -> f64 {
    reward_from(
        throughput_ratio(snap),
        snap.loss_ratio,
        snap.srtt_ns,
        snap.min_rtt.as_nanos() as f64,
        snap.max_rtt.as_nanos() as f64,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    Loss,
    Completed,
    MaxSteps,
}

/// Per-episode bookkeeping of one agent.
#[derive(Clone, Debug)]
pub struct CcEpisode {
    steps: u64,
    loss_threshold: f64,
    max_steps: u64,
    done: Option<DoneReason>,
}

/// What the agent reports at the end of a step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub observation: [f64; 4],
    pub reward: f64,
    pub done: bool,
}

impl CcEpisode {
    pub fn new(config: &CcConfig) -> Self {
        CcEpisode {
            steps: 0,
            loss_threshold: config.loss_done_threshold,
            max_steps: config.max_steps,
            done: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn done_reason(&self) -> Option<DoneReason> {
        self.done
    }

    /// Counts an action-driven step.
    pub fn on_action(&mut self) {
        self.steps += 1;
    }

    /// Evaluates a finished step. The done reason is latched the first time
    /// any termination condition holds.
    pub fn on_step_end(
        &mut self,
        snap: &StepSnapshot,
        cwnd: f64,
        cwnd_cap: f64,
        flow_completed: bool,
    ) -> StepReport {
        if self.done.is_none() {
            self.done = if snap.loss_ratio >= self.loss_threshold {
                Some(DoneReason::Loss)
            } else if flow_completed {
                Some(DoneReason::Completed)
            } else if self.steps >= self.max_steps {
                Some(DoneReason::MaxSteps)
            } else {
                None
            };
        }
        StepReport {
            observation: observation(snap, cwnd, cwnd_cap),
            reward: reward(snap),
            done: self.done.is_some(),
        }
    }
}
