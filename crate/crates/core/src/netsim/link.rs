use serde::{Deserialize, Serialize};

use crate::time::{serialisation_time, SimTime};

/// Bandwidth and one-way propagation delay of a link direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_bps: f64,
    pub delay: SimTime,
}

impl LinkParams {
    pub fn new(bandwidth_bps: f64, delay: SimTime) -> Self {
        assert!(bandwidth_bps > 0.0 && bandwidth_bps.is_finite(), "bandwidth must be positive");
        LinkParams { bandwidth_bps, delay }
    }

    pub fn serialisation(&self, bytes: u32) -> SimTime {
        serialisation_time(bytes, self.bandwidth_bps)
    }
}

/// One direction of a point-to-point link with an unbounded FIFO in front of
/// the transmitter: a packet starts serialising when the previous one is done.
#[derive(Clone, Debug)]
pub struct Link {
    params: LinkParams,
    busy_until: SimTime,
}

impl Link {
    pub fn new(params: LinkParams) -> Self {
        Link { params, busy_until: SimTime::ZERO }
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    /// Sends `bytes` at `now` and returns when the last bit reaches the far end.
    pub fn transmit(&mut self, now: SimTime, bytes: u32) -> SimTime {
        let start = now.max(self.busy_until);
        self.busy_until = start + self.params.serialisation(bytes);
        self.busy_until + self.params.delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrival_is_serialisation_plus_propagation() {
        let mut link = Link::new(LinkParams::new(100e6, SimTime::from_micros(17_500)));
        let at = link.transmit(SimTime::ZERO, 1500);
        assert_eq!(at, SimTime::from_micros(120) + SimTime::from_micros(17_500));
    }

    #[test]
    fn zero_propagation_is_pure_serialisation() {
        let mut link = Link::new(LinkParams::new(100e6, SimTime::ZERO));
        assert_eq!(link.transmit(SimTime::from_nanos(5), 1500), SimTime::from_nanos(120_005));
    }

    #[test]
    fn back_to_back_packets_are_one_serialisation_apart() {
        let mut link = Link::new(LinkParams::new(100e6, SimTime::from_millis(10)));
        let a = link.transmit(SimTime::ZERO, 1500);
        let b = link.transmit(SimTime::ZERO, 1500);
        assert_eq!(b - a, SimTime::from_micros(120));
        // An idle gap resets the FIFO.
        let c = link.transmit(SimTime::from_millis(50), 1500);
        assert_eq!(c, SimTime::from_millis(60) + SimTime::from_micros(120));
    }
}
