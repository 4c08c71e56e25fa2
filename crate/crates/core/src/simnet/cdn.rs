use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};

/// The external CDN as an ideal server: a fixed connect delay, a fixed
/// per-client rate, no loss and no contention between clients. Outage
/// windows pause every transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdnModel {
    pub connect_delay: SimDuration,
    /// Delay of a follow-up request on an open connection.
    pub request_delay: SimDuration,
    pub rate_bps: u64,
    /// Progress is reported in blocks of this many bytes.
    pub block_bytes: u64,
    pub outages: Vec<(SimTime, SimTime)>,
}

impl Default for CdnModel {
    fn default() -> Self {
        Self {
            connect_delay: SimDuration::from_millis(200),
            request_delay: SimDuration::from_millis(40),
            rate_bps: 8_000_000,
            block_bytes: 64 * 1024,
            outages: Vec::new(),
        }
    }
}

impl CdnModel {
    /// Moves `t` past any outage that contains it.
    fn up_at(&self, mut t: SimTime) -> SimTime {
        loop {
            match self.outages.iter().find(|(a, b)| *a <= t && t < *b) {
                Some(&(_, end)) => t = end,
                None => return t,
            }
        }
    }

    /// When `bytes` finish sending if transmission starts at `start`,
    /// pausing across outages.
    fn finish(&self, start: SimTime, bytes: u64) -> SimTime {
        let mut t = self.up_at(start);
        let mut left = SimDuration::transmission(bytes, self.rate_bps as f64);
        loop {
            let next_outage = self.outages.iter().filter(|(a, _)| *a > t).map(|o| o.0).min();
            match next_outage {
                Some(a) if t + left > a => {
                    left = left - a.since(t);
                    t = self.up_at(a);
                }
                _ => return t + left,
            }
        }
    }

    /// Delivery schedule for `bytes`: when each block is complete.
    /// `fresh` selects the connect delay over the request delay.
    pub fn fetch(&self, bytes: Range<u64>, now: SimTime, fresh: bool) -> Vec<(SimTime, Range<u64>)> {
        let delay = if fresh { self.connect_delay } else { self.request_delay };
        let start = now + delay;
        let block = self.block_bytes.max(1);
        let mut out = Vec::new();
        let mut at = bytes.start;
        while at < bytes.end {
            let end = (at + block).min(bytes.end);
            out.push((self.finish(start, end - bytes.start), at..end));
            at = end;
        }
        out
    }
}
