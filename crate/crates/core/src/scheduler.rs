//! Packet-level multipath schedulers: which queued sequence numbers a path
//! should request next.
//!
//! [`SchedulerKind::ByteScheduler`] predicts, from each path's delivered
//! rate (not its congestion window) and base RTT, when the path's next
//! requests would land, and compares that with when each queue position
//! will be needed by the in-order player. Slow paths are therefore handed
//! positions deep in the queue that faster paths will not reach first, and
//! they are fetched straight by position. Near the end of a task, spare
//! budget is spent racing overdue or late packets on a second path.
//!
//! MinRTT and RoundRobin always hand out the front of the queue and differ
//! only in which path gets to pump first.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::time::{SimDuration, SimTime};
use crate::transport::{PathId, RequestQueue};

/// Tolerated lateness of a predicted arrival against its need time: one
/// frame at 30 fps.
pub const NEED_SLACK: SimDuration = SimDuration(33_000);
/// Most duplicates tail redundancy adds in one pump.
pub const TAIL_REDUNDANCY_CAP: usize = 32;
const FORECAST_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    ByteScheduler,
    MinRtt,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulerPolicy {
    pub kind: SchedulerKind,
    pub redundancy_enabled: bool,
}

impl SchedulerPolicy {
    pub const BYTESCHEDULER: Self = Self { kind: SchedulerKind::ByteScheduler, redundancy_enabled: true };
    pub const BYTESCHEDULER_NR: Self = Self { kind: SchedulerKind::ByteScheduler, redundancy_enabled: false };
    pub const MINRTT: Self = Self { kind: SchedulerKind::MinRtt, redundancy_enabled: false };
    pub const ROUNDROBIN: Self = Self { kind: SchedulerKind::RoundRobin, redundancy_enabled: false };

    pub const ALL: [Self; 4] = [Self::BYTESCHEDULER, Self::BYTESCHEDULER_NR, Self::MINRTT, Self::ROUNDROBIN];

    pub fn name(&self) -> &'static str {
        match (self.kind, self.redundancy_enabled) {
            (SchedulerKind::ByteScheduler, true) => "bytescheduler",
            (SchedulerKind::ByteScheduler, false) => "bytescheduler-nr",
            (SchedulerKind::MinRtt, _) => "minrtt",
            (SchedulerKind::RoundRobin, _) => "roundrobin",
        }
    }
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        Self::BYTESCHEDULER
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("scheduler", format!("unknown scheduler {s:?}; expected bytescheduler, bytescheduler-nr, minrtt or roundrobin")))
    }
}

impl Serialize for SchedulerPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SchedulerPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Delivered-throughput forecast for one path, in packets per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathForecast {
    pub path_id: PathId,
    pub predicted_rate: f64,
    pub samples: u32,
}

impl PathForecast {
    pub fn new(path_id: PathId, prior_rate: f64) -> Self {
        Self { path_id, predicted_rate: prior_rate.max(0.0), samples: 0 }
    }

    /// Predicted arrival of the `position`-th packet requested now, given
    /// the path's base RTT and the packets already queued on it.
    pub fn predicted_arrival(&self, now: SimTime, base_rtt: SimDuration, queued: usize, position: usize) -> SimTime {
        let rate = self.predicted_rate.max(1e-3);
        now + base_rtt + SimDuration::from_secs_f64((queued + position + 1) as f64 / rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliverySample {
    pub packets: u64,
    pub interval: SimDuration,
}

/// Folds one delivery sample into the forecast (EWMA, alpha 1/4). The first
/// sample replaces the prior outright.
pub fn update_forecast(forecast: &PathForecast, sample: DeliverySample) -> PathForecast {
    if sample.interval.as_micros() == 0 {
        return *forecast;
    }
    let observed = sample.packets as f64 / sample.interval.as_secs_f64();
    let predicted_rate = if forecast.samples == 0 {
        observed
    } else {
        (1.0 - FORECAST_ALPHA) * forecast.predicted_rate + FORECAST_ALPHA * observed
    };
    PathForecast { path_id: forecast.path_id, predicted_rate, samples: forecast.samples.saturating_add(1) }
}

/// What a scheduler may know about one path when deciding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSnapshot {
    pub path_id: PathId,
    pub alive: bool,
    pub base_rtt: SimDuration,
    pub srtt: SimDuration,
    pub rttvar: SimDuration,
    pub inflight: usize,
    pub budget: u32,
    pub forecast: PathForecast,
}

impl PathSnapshot {
    fn rate(&self) -> f64 {
        self.forecast.predicted_rate.max(1e-3)
    }

    /// Seconds from now until the path's data pipe is free for new requests.
    fn pipe_free(&self) -> f64 {
        self.base_rtt.as_secs_f64() + self.inflight as f64 / self.rate()
    }

    /// Seconds from now until a block of `n` fresh packets would be fully in.
    fn block_done(&self, n: usize) -> f64 {
        self.pipe_free() + n as f64 / self.rate()
    }

    /// Packets per second the path can keep up: its forecast, capped by
    /// what the congestion budget lets through per round trip.
    fn sustained_rate(&self) -> f64 {
        let cc_rate = self.budget as f64 / self.srtt.as_secs_f64().max(1e-3);
        self.rate().min(cc_rate)
    }

    fn spare(&self) -> usize {
        (self.budget as usize).saturating_sub(self.inflight)
    }
}

/// An undelivered sequence number in flight on exactly one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TailEntry {
    pub seq: u64,
    pub holder: PathId,
    pub issued_at: SimTime,
}

/// Read-only view of a transfer session handed to the scheduler.
#[derive(Debug, Clone, Copy)]
pub struct SessionView<'a> {
    pub queue: &'a RequestQueue,
    /// Leading queue positions inside the receive window.
    pub eligible: usize,
    pub paths: &'a [PathSnapshot],
    /// Single-copy in-flight sequence numbers, highest first.
    pub tail: &'a [TailEntry],
}

impl SessionView<'_> {
    fn path(&self, id: PathId) -> Option<&PathSnapshot> {
        self.paths.iter().find(|p| p.path_id == id)
    }
}

/// Order in which paths get to pump at one decision point.
pub fn pump_order(policy: SchedulerPolicy, paths: &[PathSnapshot], rotation: usize) -> Vec<PathId> {
    let mut live: Vec<&PathSnapshot> = paths.iter().filter(|p| p.alive).collect();
    match policy.kind {
        SchedulerKind::MinRtt => live.sort_by_key(|p| (p.srtt, p.path_id)),
        SchedulerKind::RoundRobin => {
            if !live.is_empty() {
                let k = rotation % live.len();
                live.rotate_left(k);
            }
        }
        SchedulerKind::ByteScheduler => {
            live.sort_by(|a, b| a.block_done(1).total_cmp(&b.block_done(1)).then(a.path_id.cmp(&b.path_id)))
        }
    }
    live.into_iter().map(|p| p.path_id).collect()
}

/// Picks up to `budget` queued sequence numbers for `path_id`, in request
/// order. The caller moves them out of the queue.
pub fn assign(policy: SchedulerPolicy, view: &SessionView<'_>, path_id: PathId, budget: usize, _now: SimTime) -> Vec<u64> {
    let Some(me) = view.path(path_id) else { return Vec::new() };
    if budget == 0 || view.eligible == 0 || !me.alive {
        return Vec::new();
    }
    let (offset, take) = match policy.kind {
        SchedulerKind::MinRtt | SchedulerKind::RoundRobin => (0, budget),
        SchedulerKind::ByteScheduler => {
            // near the end a full block would land after the faster paths
            // have finished; a smaller one may still fit
            let mut n = budget;
            let mut offset = byte_offset(view, me, n);
            while offset >= view.eligible && n > 1 {
                n /= 2;
                offset = byte_offset(view, me, n);
            }
            (offset, n)
        }
    };
    let end = (offset + take).min(view.eligible);
    (offset..end).filter_map(|pos| view.queue.get(pos)).collect()
}

/// Queue positions that strictly faster paths will have delivered before
/// this path's block could land, less one frame of slack.
fn byte_offset(view: &SessionView<'_>, me: &PathSnapshot, n: usize) -> usize {
    let my_done = me.block_done(n);
    let deadline = my_done - NEED_SLACK.as_secs_f64();
    let covered: f64 = view
        .paths
        .iter()
        .filter(|p| p.alive && p.path_id != me.path_id && p.block_done(n) < my_done)
        .map(|p| ((deadline - p.pipe_free()) * p.sustained_rate()).max(0.0))
        .sum();
    covered.floor() as usize
}

/// Duplicates late or overdue tail packets onto a path with spare budget.
/// Only applies once the unsent queue is shorter than the spare capacity
/// of all live paths, i.e. at the end of a task.
pub fn tail_redundancy(policy: SchedulerPolicy, view: &SessionView<'_>, path_id: PathId, spare_budget: usize, now: SimTime) -> Vec<u64> {
    if policy.kind != SchedulerKind::ByteScheduler || !policy.redundancy_enabled || spare_budget == 0 {
        return Vec::new();
    }
    let Some(me) = view.path(path_id) else { return Vec::new() };
    if !me.alive {
        return Vec::new();
    }
    let total_spare: usize = view.paths.iter().filter(|p| p.alive).map(PathSnapshot::spare).sum();
    if view.queue.len() >= total_spare {
        return Vec::new();
    }
    let cap = spare_budget.min(TAIL_REDUNDANCY_CAP);
    // when each live path drains its pipe; a straggler's holder is excluded
    // from the "others" so keep the two latest
    let mut latest = [(now, None::<PathId>); 2];
    for p in view.paths.iter().filter(|p| p.alive) {
        let t = now + SimDuration::from_secs_f64(p.pipe_free());
        if t > latest[0].0 || latest[0].1.is_none() {
            latest[1] = latest[0];
            latest[0] = (t, Some(p.path_id));
        } else if t > latest[1].0 || latest[1].1.is_none() {
            latest[1] = (t, Some(p.path_id));
        }
    }
    let mut picked = Vec::new();
    let mut mine = me.forecast.predicted_arrival(now, me.base_rtt, me.inflight, 0);
    for entry in view.tail {
        if picked.len() == cap {
            break;
        }
        if entry.holder == path_id {
            continue;
        }
        let Some(holder) = view.path(entry.holder) else { continue };
        let expected = entry.issued_at + holder.srtt + holder.rttvar;
        // probably lost: late by more than the usual spread
        let overdue = entry.issued_at + holder.srtt + SimDuration(4 * holder.rttvar.0);
        // a copy only helps a straggler: one the other paths would be
        // left waiting for
        let others_done = if latest[0].1 == Some(entry.holder) { latest[1].0 } else { latest[0].0 };
        if overdue <= now || (mine < expected && expected > others_done) {
            picked.push(entry.seq);
            mine = me.forecast.predicted_arrival(now, me.base_rtt, me.inflight, picked.len());
        }
    }
    picked
}
