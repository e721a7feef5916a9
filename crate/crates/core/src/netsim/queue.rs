use std::collections::VecDeque;

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enqueue {
    /// The packet will start serialising at `start` and leave the
    /// transmitter at `depart`.
    Accepted { start: SimTime, depart: SimTime },
    Dropped,
}

/// Drop-tail FIFO in front of the bottleneck transmitter.
///
/// Occupancy counts every accepted packet that has not finished
/// serialising, including the one currently on the wire. Completion times are
/// known at enqueue, so the queue drains lazily instead of through events.
#[derive(Clone, Debug)]
pub struct BottleneckQueue {
    capacity: usize,
    serialisation: SimTime,
    busy_until: SimTime,
    departures: VecDeque<SimTime>,
    drops: u64,
    accepted: u64,
    delay_sum: SimTime,
}

impl BottleneckQueue {
    pub fn new(capacity: usize, serialisation: SimTime) -> Self {
        BottleneckQueue {
            capacity,
            serialisation,
            busy_until: SimTime::ZERO,
            departures: VecDeque::with_capacity(capacity),
            drops: 0,
            accepted: 0,
            delay_sum: SimTime::ZERO,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Total time accepted packets spent waiting before serialisation.
    pub fn total_queuing_delay(&self) -> SimTime {
        self.delay_sum
    }

    fn drain(&mut self, now: SimTime) {
        while self.departures.front().is_some_and(|&d| d <= now) {
            self.departures.pop_front();
        }
    }

    pub fn occupancy(&mut self, now: SimTime) -> usize {
        self.drain(now);
        self.departures.len()
    }

    pub fn enqueue(&mut self, now: SimTime) -> Enqueue {
        self.drain(now);
        if self.departures.len() >= self.capacity {
            self.drops += 1;
            return Enqueue::Dropped;
        }
        let start = now.max(self.busy_until);
        let depart = start + self.serialisation;
        self.busy_until = depart;
        self.departures.push_back(depart);
        self.accepted += 1;
        self.delay_sum = self.delay_sum + (start - now);
        Enqueue::Accepted { start, depart }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SER: SimTime = SimTime::from_micros(120);

    #[test]
    fn last_slot_accepted_then_full() {
        let mut q = BottleneckQueue::new(440, SER);
        for _ in 0..439 {
            assert!(matches!(q.enqueue(SimTime::ZERO), Enqueue::Accepted { .. }));
        }
        assert_eq!(q.occupancy(SimTime::ZERO), 439);
        assert!(matches!(q.enqueue(SimTime::ZERO), Enqueue::Accepted { .. }));
        assert_eq!(q.occupancy(SimTime::ZERO), 440);
        assert_eq!(q.enqueue(SimTime::ZERO), Enqueue::Dropped);
        assert_eq!(q.drops(), 1);
        assert_eq!(q.occupancy(SimTime::ZERO), 440);
    }

    #[test]
    fn instant_burst_at_low_end_capacity() {
        let mut q = BottleneckQueue::new(80, SER);
        let accepted = (0..80).filter(|_| matches!(q.enqueue(SimTime::ZERO), Enqueue::Accepted { .. })).count();
        assert_eq!(accepted, 80);
        assert_eq!(q.enqueue(SimTime::ZERO), Enqueue::Dropped);
    }

    #[test]
    fn fifo_start_times_and_queuing_delay() {
        let mut q = BottleneckQueue::new(10, SER);
        let first = q.enqueue(SimTime::ZERO);
        let second = q.enqueue(SimTime::ZERO);
        assert_eq!(first, Enqueue::Accepted { start: SimTime::ZERO, depart: SER });
        assert_eq!(second, Enqueue::Accepted { start: SER, depart: SER + SER });
        assert_eq!(q.total_queuing_delay(), SER);
    }

    #[test]
    fn queue_drains_over_time() {
        let mut q = BottleneckQueue::new(3, SER);
        for _ in 0..3 {
            q.enqueue(SimTime::ZERO);
        }
        assert_eq!(q.enqueue(SimTime::ZERO), Enqueue::Dropped);
        assert_eq!(q.occupancy(SER), 2);
        assert!(matches!(q.enqueue(SER), Enqueue::Accepted { .. }));
    }
}
