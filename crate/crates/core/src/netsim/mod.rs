//! Packet-level dumbbell network: links, a drop-tail bottleneck, and a
//! window-controlled reliable transport.

pub mod dumbbell;
pub mod link;
pub mod queue;
pub mod ramp;
pub mod stats;
pub mod transport;

use crate::time::SimTime;

pub use dumbbell::{Dumbbell, DumbbellFactory, NetworkParams};
pub use link::{Link, LinkParams};
pub use queue::{BottleneckQueue, Enqueue};
pub use ramp::FairShareRamp;
pub use stats::{FlowStats, StepSnapshot};
pub use transport::{Phase, Sender, SlowStartExit};

pub const DATA_BYTES: u32 = 1500;
pub const ACK_BYTES: u32 = 40;

/// A data segment or its acknowledgement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub flow: u32,
    /// The data segment's sequence number; an ack echoes the segment that
    /// triggered it.
    pub seq: u64,
    /// Acks only: the next sequence number the receiver expects.
    pub cum_ack: u64,
    pub is_ack: bool,
    /// When the data segment left the sender; echoed back in its ack.
    pub sent_at: SimTime,
    pub retransmit: bool,
}

impl Packet {
    pub fn bytes(&self) -> u32 {
        if self.is_ack {
            ACK_BYTES
        } else {
            DATA_BYTES
        }
    }
}

/// Bandwidth-delay product in full-size packets.
pub fn bdp_packets(bandwidth_bps: f64, rtt: SimTime) -> f64 {
    bandwidth_bps * rtt.as_secs_f64() / (DATA_BYTES as f64 * 8.0)
}
