//! Per-path congestion control. The transport only needs an in-flight
//! request budget that reacts to delivery and loss signals, so any
//! controller can be plugged in behind [`CongestionController`].

use std::fmt::Debug;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcSignal {
    Ack,
    Loss,
}

pub trait CongestionController: Debug + Send {
    /// Packets this path may have requested but not yet received.
    fn budget(&self) -> u32;

    /// Feeds one signal and returns the updated budget.
    fn on_signal(&mut self, signal: CcSignal) -> u32;
}

/// Additive increase, multiplicative decrease over a packet budget: +1 per
/// full window of acks, halved on loss, never below one.
#[derive(Debug, Clone)]
pub struct Aimd {
    budget: u32,
    acked_in_window: u32,
    max_budget: u32,
}

impl Aimd {
    pub fn new(initial: u32, max_budget: u32) -> Self {
        let max_budget = max_budget.max(1);
        Self { budget: initial.clamp(1, max_budget), acked_in_window: 0, max_budget }
    }
}

impl CongestionController for Aimd {
    fn budget(&self) -> u32 {
        self.budget
    }

    fn on_signal(&mut self, signal: CcSignal) -> u32 {
        match signal {
            CcSignal::Ack => {
                self.acked_in_window += 1;
                if self.acked_in_window >= self.budget {
                    self.acked_in_window = 0;
                    self.budget = (self.budget + 1).min(self.max_budget);
                }
            }
            CcSignal::Loss => {
                self.budget = (self.budget / 2).max(1);
                self.acked_in_window = 0;
            }
        }
        self.budget
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_halves_with_floor_of_one() {
        let mut cc = Aimd::new(10, 1000);
        assert_eq!(cc.on_signal(CcSignal::Loss), 5);
        let mut cc = Aimd::new(1, 1000);
        assert_eq!(cc.on_signal(CcSignal::Loss), 1);
    }

    #[test]
    fn ten_ack_windows_from_four_reach_fourteen() {
        // Step-through oracle: a window at budget b takes b acks.
        let mut expected = 4u32;
        let mut acks = 0u32;
        for _ in 0..10 {
            acks += expected;
            expected += 1;
        }
        assert_eq!(expected, 14);
        let mut cc = Aimd::new(4, 1000);
        for _ in 0..acks {
            cc.on_signal(CcSignal::Ack);
        }
        assert_eq!(cc.budget(), 14);
    }

    #[test]
    fn budget_respects_ceiling() {
        let mut cc = Aimd::new(3, 4);
        for _ in 0..100 {
            cc.on_signal(CcSignal::Ack);
        }
        assert_eq!(cc.budget(), 4);
    }
}
