use std::collections::BTreeMap;

use crate::model::VideoId;

/// Per-cycle view counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PopularityLedger {
    current: BTreeMap<VideoId, u64>,
    previous: BTreeMap<VideoId, u64>,
    /// Views counted in cycles that already ended.
    closed_total: u64,
    cycles: u64,
}

impl PopularityLedger {
    pub fn record_view(&mut self, video: VideoId) {
        *self.current.entry(video).or_insert(0) += 1;
    }

    pub fn current(&self, video: VideoId) -> u64 {
        self.current.get(&video).copied().unwrap_or(0)
    }

    pub fn previous(&self, video: VideoId) -> u64 {
        self.previous.get(&video).copied().unwrap_or(0)
    }

    pub fn current_counts(&self) -> &BTreeMap<VideoId, u64> {
        &self.current
    }

    /// Views across every cycle, ended or not.
    pub fn total_views(&self) -> u64 {
        self.closed_total + self.current.values().sum::<u64>()
    }

    pub fn cycles_closed(&self) -> u64 {
        self.cycles
    }

    /// Moves the current counts to `previous` and starts a fresh cycle.
    pub fn close_cycle(&mut self) {
        self.closed_total += self.current.values().sum::<u64>();
        self.previous = std::mem::take(&mut self.current);
        self.cycles += 1;
    }
}
