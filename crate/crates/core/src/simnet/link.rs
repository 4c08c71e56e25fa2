use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};

/// One direction of a network path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub propagation_delay: SimDuration,
    pub bandwidth_bps: u64,
    pub loss_probability: f64,
    /// Requests and data share one medium (WLAN contention).
    pub half_duplex: bool,
}

impl LinkModel {
    pub fn lose(&self, rng: &mut impl Rng) -> bool {
        self.loss_probability > 0.0 && rng.random::<f64>() < self.loss_probability
    }
}

/// A transmitter that sends one frame at a time, first come first served.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fifo {
    pub rate_bps: u64,
    /// Fixed cost per frame (contention, preamble, acknowledgement).
    pub frame_overhead: SimDuration,
    busy_until: SimTime,
    busy_total: SimDuration,
}

impl Fifo {
    pub fn new(rate_bps: u64, frame_overhead: SimDuration) -> Self {
        Self { rate_bps, frame_overhead, busy_until: SimTime::ZERO, busy_total: SimDuration::ZERO }
    }

    /// Queues a frame of `bytes` arriving at `now` and returns when its
    /// transmission finishes.
    pub fn send(&mut self, now: SimTime, bytes: u64) -> SimTime {
        let start = now.max(self.busy_until);
        let tx = SimDuration::transmission(bytes, self.rate_bps as f64) + self.frame_overhead;
        self.busy_until = start + tx;
        self.busy_total += tx;
        self.busy_until
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// Total time spent transmitting.
    pub fn busy_total(&self) -> SimDuration {
        self.busy_total
    }

    /// Backlog ahead of a frame arriving now.
    pub fn backlog(&self, now: SimTime) -> SimDuration {
        self.busy_until.since(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_queue_back_to_back() {
        let mut f = Fifo::new(8_000_000, SimDuration::from_micros(100));
        assert_eq!(f.send(SimTime::ZERO, 1000), SimTime(1100));
        assert_eq!(f.send(SimTime(500), 1000), SimTime(2200));
        assert_eq!(f.send(SimTime(5000), 1000), SimTime(6100));
        assert_eq!(f.busy_total(), SimDuration(3300));
    }
}
