use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{PacketLayout, PeerId, VideoId};
use crate::scheduler::{self, DeliverySample, PathForecast, PathSnapshot, SchedulerPolicy, SessionView, TailEntry};
use crate::time::{SimDuration, SimTime};

use super::cc::{Aimd, CcSignal, CongestionController};
use super::queue::RequestQueue;
use super::{DataRequest, PathId};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransferConfig {
    /// Sequence numbers per bundled request.
    pub bundle_size: usize,
    pub min_rto: SimDuration,
    pub initial_budget: u32,
    pub max_budget: u32,
    /// Furthest a request may reach past the in-order delivery point, in
    /// packets. `None` means unlimited.
    pub reorder_window: Option<u64>,
    pub policy: SchedulerPolicy,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            bundle_size: 16,
            min_rto: SimDuration::from_millis(100),
            initial_budget: 32,
            max_budget: 512,
            reorder_window: None,
            policy: SchedulerPolicy::default(),
        }
    }
}

/// A connected peer offered to a new session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub peer_id: PeerId,
    /// RTT measured while connecting.
    pub initial_rtt: SimDuration,
    /// Expected delivery rate in packets per second, used until the path
    /// has delivered something.
    pub prior_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttEstimator {
    pub srtt: SimDuration,
    pub rttvar: SimDuration,
    pub min_rtt: SimDuration,
    pub samples: u64,
}

impl RttEstimator {
    fn new(initial: SimDuration) -> Self {
        Self { srtt: initial, rttvar: SimDuration(initial.0 / 2), min_rtt: initial, samples: 0 }
    }

    /// EWMA update with alpha 1/8 and beta 1/4.
    pub fn observe(&mut self, sample: SimDuration) {
        if self.samples == 0 {
            self.srtt = sample;
            self.rttvar = SimDuration(sample.0 / 2);
            self.min_rtt = sample;
        } else {
            let srtt = self.srtt.0 as f64;
            let s = sample.0 as f64;
            let var = 0.75 * self.rttvar.0 as f64 + 0.25 * (srtt - s).abs();
            self.rttvar = SimDuration(var.round() as u64);
            self.srtt = SimDuration((0.875 * srtt + 0.125 * s).round() as u64);
            self.min_rtt = self.min_rtt.min(sample);
        }
        self.samples += 1;
    }

    /// `2 * srtt + 4 * rttvar`, floored at `min_rto`.
    pub fn rto(&self, min_rto: SimDuration) -> SimDuration {
        SimDuration(2 * self.srtt.0 + 4 * self.rttvar.0).max(min_rto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct InFlight {
    request_id: u64,
    issued_at: SimTime,
    deadline: SimTime,
    /// Position in this path's send order.
    ordinal: u64,
}

/// A packet is presumed lost once one sent this many places after it on
/// the same path has arrived. Servers answer in request order over a FIFO
/// link, so a gap that large is not reordering.
pub const GAP_THRESHOLD: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceivedRecord {
    pub seq: u64,
    pub at: SimTime,
    pub rtt_sample: Option<SimDuration>,
}

#[derive(Debug)]
pub struct PathState {
    pub path_id: PathId,
    pub peer_id: PeerId,
    pub alive: bool,
    pub rtt: RttEstimator,
    /// EWMA of timeouts over outcomes (weight 1/16).
    pub loss_estimate: f64,
    pub forecast: PathForecast,
    request_queue: BTreeMap<u64, InFlight>,
    deadlines: BTreeSet<(SimTime, u64)>,
    send_order: BTreeSet<(u64, u64)>,
    next_ordinal: u64,
    received_log: Vec<ReceivedRecord>,
    cc: Box<dyn CongestionController>,
    sample_start: Option<SimTime>,
    sample_packets: u64,
    pub timeouts: u64,
}

impl PathState {
    pub fn in_flight(&self) -> usize {
        self.request_queue.len()
    }

    pub fn budget(&self) -> u32 {
        self.cc.budget()
    }

    pub fn is_requested(&self, seq: u64) -> bool {
        self.request_queue.contains_key(&seq)
    }

    /// The path received queue: every packet that arrived on this path.
    pub fn received_log(&self) -> &[ReceivedRecord] {
        &self.received_log
    }

    fn snapshot(&self) -> PathSnapshot {
        PathSnapshot {
            path_id: self.path_id,
            alive: self.alive,
            base_rtt: self.rtt.min_rtt,
            srtt: self.rtt.srtt,
            rttvar: self.rtt.rttvar,
            inflight: self.request_queue.len(),
            budget: self.cc.budget(),
            forecast: self.forecast,
        }
    }

    fn take(&mut self, seq: u64) -> Option<InFlight> {
        let entry = self.request_queue.remove(&seq)?;
        self.deadlines.remove(&(entry.deadline, seq));
        self.send_order.remove(&(entry.ordinal, seq));
        Some(entry)
    }

    fn close_sample(&mut self, now: SimTime) {
        if let Some(start) = self.sample_start.take() {
            let interval = now.since(start);
            if interval.as_micros() > 0 && self.sample_packets > 0 {
                self.forecast = scheduler::update_forecast(&self.forecast, DeliverySample { packets: self.sample_packets, interval });
            }
        }
        self.sample_packets = 0;
    }

    fn record_delivery(&mut self, now: SimTime) {
        match self.sample_start {
            // the first arrival after an idle pipe opens a sample
            None => {
                self.sample_start = Some(now);
                self.sample_packets = 0;
            }
            Some(start) => {
                self.sample_packets += 1;
                let window = self.rtt.srtt.max(SimDuration::from_millis(50));
                if now.since(start) >= window {
                    self.close_sample(now);
                    self.sample_start = Some(now);
                }
            }
        }
        if self.request_queue.is_empty() {
            self.close_sample(now);
        }
    }
}

/// What one arriving packet did to the session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryEvents {
    /// Sequence numbers released to the player, in order.
    pub delivered: Range<u64>,
    pub redundant: bool,
    pub violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct SessionStats {
    pub packets_received: u64,
    pub unique_delivered: u64,
    pub redundant: u64,
    pub protocol_violations: u64,
    pub timeouts: u64,
    /// Losses inferred from later packets on the same path.
    pub gap_losses: u64,
    pub rejects: u64,
    pub requests_sent: u64,
    pub packets_requested: u64,
    pub duplicates_requested: u64,
    pub max_reorder_buffer: u64,
}

/// Client side of one pull-based multipath transfer.
///
/// Every sequence number of the task lives in exactly one home: the
/// overall request queue (unsent), some path's request queue (in flight)
/// or the overall received set. The only exception is a deliberate
/// duplicate, counted in `extra_copies`.
#[derive(Debug)]
pub struct TransferSession {
    video_id: VideoId,
    range: Range<u64>,
    config: TransferConfig,
    queue: RequestQueue,
    received: Vec<bool>,
    received_count: u64,
    next_deliver: u64,
    paths: Vec<PathState>,
    extra_copies: HashMap<u64, u32>,
    next_request_id: u64,
    rotation: usize,
    stats: SessionStats,
}

impl TransferSession {
    /// Opens a session over the packets owned by `byte_range`.
    pub fn open(
        video_id: VideoId,
        layout: &PacketLayout,
        byte_range: Range<u64>,
        paths: &[PathSpec],
        config: TransferConfig,
        now: SimTime,
    ) -> Result<Self> {
        Self::open_packets(video_id, layout.packets_for(&byte_range), paths, config, now)
    }

    pub fn open_packets(video_id: VideoId, range: Range<u64>, paths: &[PathSpec], config: TransferConfig, _now: SimTime) -> Result<Self> {
        if range.is_empty() {
            return Err(Error::SessionRefused("empty byte range"));
        }
        if paths.is_empty() {
            return Err(Error::SessionRefused("no peer paths"));
        }
        if config.reorder_window == Some(0) {
            return Err(Error::SessionRefused("empty reorder window"));
        }
        let bundle_size = config.bundle_size.max(1);
        let paths = paths
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let id = PathId(i as u32);
                let rtt = RttEstimator::new(spec.initial_rtt);
                let prior = spec
                    .prior_rate
                    .unwrap_or(config.initial_budget as f64 / spec.initial_rtt.as_secs_f64().max(1e-3));
                PathState {
                    path_id: id,
                    peer_id: spec.peer_id,
                    alive: true,
                    rtt,
                    loss_estimate: 0.0,
                    forecast: PathForecast::new(id, prior),
                    request_queue: BTreeMap::new(),
                    deadlines: BTreeSet::new(),
                    send_order: BTreeSet::new(),
                    next_ordinal: 0,
                    received_log: Vec::new(),
                    cc: Box::new(Aimd::new(config.initial_budget, config.max_budget)),
                    sample_start: None,
                    sample_packets: 0,
                    timeouts: 0,
                }
            })
            .collect();
        let n = (range.end - range.start) as usize;
        Ok(Self {
            video_id,
            queue: RequestQueue::new(range.clone()),
            received: vec![false; n],
            received_count: 0,
            next_deliver: range.start,
            range,
            config: TransferConfig { bundle_size, ..config },
            paths,
            extra_copies: HashMap::new(),
            next_request_id: 0,
            rotation: 0,
            stats: SessionStats::default(),
        })
    }

    pub fn video_id(&self) -> VideoId {
        self.video_id
    }

    pub fn range(&self) -> Range<u64> {
        self.range.clone()
    }

    pub fn config(&self) -> &TransferConfig {
        &self.config
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn paths(&self) -> &[PathState] {
        &self.paths
    }

    pub fn path(&self, id: PathId) -> Option<&PathState> {
        self.paths.get(id.0 as usize)
    }

    pub fn overall_request_queue(&self) -> &RequestQueue {
        &self.queue
    }

    /// Highest sequence number delivered in order, if any.
    pub fn delivered_watermark(&self) -> Option<u64> {
        (self.next_deliver > self.range.start).then(|| self.next_deliver - 1)
    }

    /// First sequence number not yet delivered to the player.
    pub fn next_to_deliver(&self) -> u64 {
        self.next_deliver
    }

    pub fn is_complete(&self) -> bool {
        self.next_deliver == self.range.end
    }

    pub fn has_live_path(&self) -> bool {
        self.paths.iter().any(|p| p.alive)
    }

    pub fn is_received(&self, seq: u64) -> bool {
        self.slot(seq).is_some_and(|i| self.received[i])
    }

    fn slot(&self, seq: u64) -> Option<usize> {
        self.range.contains(&seq).then(|| (seq - self.range.start) as usize)
    }

    fn eligible(&self) -> usize {
        match self.config.reorder_window {
            Some(w) => self.queue.positions_below(self.next_deliver.saturating_add(w)),
            None => self.queue.len(),
        }
    }

    fn snapshots(&self) -> Vec<PathSnapshot> {
        self.paths.iter().map(PathState::snapshot).collect()
    }

    /// Order in which the paths should pump at this decision point.
    pub fn pump_order(&mut self) -> Vec<PathId> {
        let order = scheduler::pump_order(self.config.policy, &self.snapshots(), self.rotation);
        self.rotation = self.rotation.wrapping_add(1);
        order
    }

    /// Undelivered single-copy in-flight sequence numbers, highest first.
    fn tail_entries(&self, limit: usize) -> Vec<TailEntry> {
        let mut entries: Vec<TailEntry> = self
            .paths
            .iter()
            .filter(|p| p.alive)
            .flat_map(|p| {
                p.request_queue
                    .iter()
                    .rev()
                    .take(limit)
                    .map(move |(&seq, f)| TailEntry { seq, holder: p.path_id, issued_at: f.issued_at })
            })
            .filter(|e| !self.extra_copies.contains_key(&e.seq))
            .collect();
        entries.sort_by(|a, b| b.seq.cmp(&a.seq));
        entries.truncate(limit);
        entries
    }

    /// Lets one path request as much as its budget allows.
    pub fn pump(&mut self, path_id: PathId, now: SimTime) -> Vec<DataRequest> {
        let Some(idx) = self.paths.iter().position(|p| p.path_id == path_id) else { return Vec::new() };
        if !self.paths[idx].alive {
            return Vec::new();
        }
        let inflight = self.paths[idx].in_flight();
        let avail = (self.paths[idx].budget() as usize).saturating_sub(inflight);
        if avail == 0 {
            return Vec::new();
        }
        let bundle = self.config.bundle_size;
        let eligible = self.eligible();
        let want = if inflight == 0 || eligible < bundle { avail } else { avail / bundle * bundle };
        let policy = self.config.policy;
        let snapshots = self.snapshots();

        let fresh = if want > 0 {
            let view = SessionView { queue: &self.queue, eligible, paths: &snapshots, tail: &[] };
            scheduler::assign(policy, &view, path_id, want, now)
        } else {
            Vec::new()
        };
        for &s in &fresh {
            let removed = self.queue.remove(s);
            debug_assert!(removed);
        }

        let spare = avail - fresh.len();
        let mut dups = Vec::new();
        if spare > 0 && policy.redundancy_enabled {
            let total_spare: usize = snapshots.iter().filter(|p| p.alive).map(|p| (p.budget as usize).saturating_sub(p.inflight)).sum();
            if self.queue.len() < total_spare {
                let tail = self.tail_entries(4 * scheduler::TAIL_REDUNDANCY_CAP);
                let view = SessionView { queue: &self.queue, eligible: self.eligible(), paths: &snapshots, tail: &tail };
                dups = scheduler::tail_redundancy(policy, &view, path_id, spare, now);
            }
        }

        let rto = self.paths[idx].rtt.rto(self.config.min_rto);
        let deadline = now + rto;
        let mut requests = Vec::new();
        let all: Vec<(u64, bool)> = fresh.iter().map(|&s| (s, false)).chain(dups.iter().map(|&s| (s, true))).collect();
        for bundle_seqs in all.chunks(bundle) {
            let request_id = self.next_request_id;
            self.next_request_id += 1;
            let path = &mut self.paths[idx];
            if path.request_queue.is_empty() && path.sample_start.is_some() {
                path.close_sample(now);
            }
            for &(seq, dup) in bundle_seqs {
                let ordinal = path.next_ordinal;
                path.next_ordinal += 1;
                path.request_queue.insert(seq, InFlight { request_id, issued_at: now, deadline, ordinal });
                path.send_order.insert((ordinal, seq));
                path.deadlines.insert((deadline, seq));
                if dup {
                    *self.extra_copies.entry(seq).or_insert(0) += 1;
                    self.stats.duplicates_requested += 1;
                }
            }
            self.stats.requests_sent += 1;
            self.stats.packets_requested += bundle_seqs.len() as u64;
            requests.push(DataRequest {
                video_id: self.video_id,
                request_id,
                path_id,
                packet_seqs: bundle_seqs.iter().map(|&(s, _)| s).collect(),
                issued_at: now,
            });
        }
        requests
    }

    /// Pumps every path in policy order and returns all requests issued.
    pub fn pump_all(&mut self, now: SimTime) -> Vec<DataRequest> {
        let mut out = Vec::new();
        for id in self.pump_order() {
            out.extend(self.pump(id, now));
        }
        out
    }

    fn drop_copy(&mut self, seq: u64) -> bool {
        match self.extra_copies.get_mut(&seq) {
            Some(n) => {
                *n -= 1;
                if *n == 0 {
                    self.extra_copies.remove(&seq);
                }
                true
            }
            None => false,
        }
    }

    /// Handles one data packet arriving on `path_id`.
    pub fn on_packet(&mut self, path_id: PathId, seq: u64, now: SimTime) -> DeliveryEvents {
        let start = self.next_deliver;
        let mut events = DeliveryEvents { delivered: start..start, ..Default::default() };
        let Some(slot) = self.slot(seq) else {
            self.stats.protocol_violations += 1;
            events.violation = true;
            return events;
        };
        let Some(idx) = self.paths.iter().position(|p| p.path_id == path_id) else {
            self.stats.protocol_violations += 1;
            events.violation = true;
            return events;
        };
        self.stats.packets_received += 1;

        let path = &mut self.paths[idx];
        let taken = path.take(seq);
        let rtt_sample = taken.map(|f| now.since(f.issued_at));
        if let Some(sample) = rtt_sample {
            path.rtt.observe(sample);
        }
        path.loss_estimate *= 15.0 / 16.0;
        path.received_log.push(ReceivedRecord { seq, at: now, rtt_sample });
        path.cc.on_signal(CcSignal::Ack);
        path.record_delivery(now);

        if self.received[slot] {
            self.stats.redundant += 1;
            events.redundant = true;
            if taken.is_some() {
                let had_extra = self.drop_copy(seq);
                debug_assert!(had_extra, "received seq {seq} was in flight without a duplicate record");
            }
            if let Some(f) = taken {
                self.detect_gaps(idx, f.ordinal, now);
            }
            return events;
        }

        self.received[slot] = true;
        self.received_count += 1;
        self.stats.unique_delivered += 1;
        if taken.is_none() {
            // a late copy of something that timed out on this path
            // or still in flight elsewhere, which now becomes a spare copy
            if !self.queue.remove(seq) {
                debug_assert!(self.paths.iter().any(|p| p.is_requested(seq)));
                *self.extra_copies.entry(seq).or_insert(0) += 1;
            }
        }

        while self.next_deliver < self.range.end && self.received[(self.next_deliver - self.range.start) as usize] {
            self.next_deliver += 1;
        }
        if let Some(f) = taken {
            self.detect_gaps(idx, f.ordinal, now);
        }
        events.delivered = start..self.next_deliver;
        let buffered = self.received_count - (self.next_deliver - self.range.start);
        self.stats.max_reorder_buffer = self.stats.max_reorder_buffer.max(buffered);
        events
    }

    /// Moves one in-flight copy off a path: back to the queue front when it
    /// was the only home, otherwise just retiring the extra copy.
    fn requeue(&mut self, seq: u64) {
        if !self.drop_copy(seq) {
            self.queue.push_front(seq);
        }
    }

    /// Declares lost everything sent on path `idx` at least
    /// `GAP_THRESHOLD` places before the packet that just arrived.
    fn detect_gaps(&mut self, idx: usize, arrived: u64, now: SimTime) {
        let mut lost = Vec::new();
        let path = &mut self.paths[idx];
        while let Some(&(ordinal, seq)) = path.send_order.first() {
            if ordinal + GAP_THRESHOLD > arrived {
                break;
            }
            path.take(seq);
            lost.push(seq);
        }
        if lost.is_empty() {
            return;
        }
        for _ in &lost {
            path.loss_estimate = path.loss_estimate * 15.0 / 16.0 + 1.0 / 16.0;
        }
        path.cc.on_signal(CcSignal::Loss);
        if path.request_queue.is_empty() {
            path.close_sample(now);
        }
        self.stats.gap_losses += lost.len() as u64;
        for seq in lost {
            self.requeue(seq);
        }
    }

    /// Expires every request whose deadline has passed and returns the
    /// affected sequence numbers.
    pub fn poll_timers(&mut self, now: SimTime) -> Vec<u64> {
        let mut expired = Vec::new();
        for idx in 0..self.paths.len() {
            let mut lost = Vec::new();
            {
                let path = &mut self.paths[idx];
                while let Some(&(deadline, seq)) = path.deadlines.first() {
                    if deadline > now {
                        break;
                    }
                    path.take(seq);
                    lost.push(seq);
                }
                if !lost.is_empty() {
                    path.timeouts += lost.len() as u64;
                    for _ in &lost {
                        path.loss_estimate = path.loss_estimate * 15.0 / 16.0 + 1.0 / 16.0;
                    }
                    path.cc.on_signal(CcSignal::Loss);
                    if path.request_queue.is_empty() {
                        path.close_sample(now);
                    }
                }
            }
            self.stats.timeouts += lost.len() as u64;
            for &seq in &lost {
                self.requeue(seq);
            }
            expired.extend(lost);
        }
        expired
    }

    /// The server on `path_id` does not hold these packets. They are handed
    /// back for redistribution and the path is retired.
    pub fn on_reject(&mut self, path_id: PathId, seqs: &[u64], now: SimTime) {
        let Some(idx) = self.paths.iter().position(|p| p.path_id == path_id) else { return };
        for &seq in seqs {
            if self.paths[idx].take(seq).is_some() {
                self.stats.rejects += 1;
                self.requeue(seq);
            }
        }
        self.retire_path(path_id, now);
    }

    /// Takes a path out of service, returning its in-flight requests.
    pub fn retire_path(&mut self, path_id: PathId, now: SimTime) {
        let Some(idx) = self.paths.iter().position(|p| p.path_id == path_id) else { return };
        let path = &mut self.paths[idx];
        path.alive = false;
        path.close_sample(now);
        let seqs: Vec<u64> = path.request_queue.keys().copied().collect();
        path.request_queue.clear();
        path.deadlines.clear();
        path.send_order.clear();
        for seq in seqs {
            self.requeue(seq);
        }
    }

    /// Earliest pending request deadline.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.paths.iter().filter_map(|p| p.deadlines.first().map(|d| d.0)).min()
    }

    /// Full scan of the queue partition and bookkeeping invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.received.len();
        let mut homes = vec![0u32; n];
        let mut queued = HashSet::new();
        for seq in self.queue.iter() {
            let i = self.slot(seq).ok_or_else(|| format!("queue holds out-of-range seq {seq}"))?;
            if !queued.insert(seq) {
                return Err(format!("seq {seq} queued twice"));
            }
            homes[i] += 1;
        }
        if queued.len() != self.queue.len() {
            return Err("queue length disagrees with its contents".into());
        }
        for (i, &r) in self.received.iter().enumerate() {
            homes[i] += r as u32;
        }
        for p in &self.paths {
            if p.deadlines.len() != p.request_queue.len() || p.send_order.len() != p.request_queue.len() {
                return Err(format!("path {} deadline index out of sync", p.path_id.0));
            }
            let logged: HashSet<u64> = p.received_log.iter().map(|r| r.seq).collect();
            for (&seq, f) in &p.request_queue {
                let i = self.slot(seq).ok_or_else(|| format!("path {} holds out-of-range seq {seq}", p.path_id.0))?;
                if !p.deadlines.contains(&(f.deadline, seq)) {
                    return Err(format!("path {} seq {seq} has no deadline", p.path_id.0));
                }
                if f.deadline <= f.issued_at {
                    return Err(format!("seq {seq} deadline not after issue"));
                }
                if logged.contains(&seq) && self.received[i] && !self.extra_copies.contains_key(&seq) {
                    return Err(format!("path {} has seq {seq} both requested and received", p.path_id.0));
                }
                homes[i] += 1;
            }
            if !p.alive && !p.request_queue.is_empty() {
                return Err(format!("retired path {} still has requests", p.path_id.0));
            }
        }
        for (i, &h) in homes.iter().enumerate() {
            let seq = self.range.start + i as u64;
            let extra = self.extra_copies.get(&seq).copied().unwrap_or(0);
            if h != 1 + extra {
                return Err(format!("seq {seq} has {h} homes, expected {}", 1 + extra));
            }
        }
        for (&seq, &c) in &self.extra_copies {
            if c == 0 || self.slot(seq).is_none() {
                return Err(format!("bad duplicate record for {seq}"));
            }
        }
        let delivered = (self.next_deliver - self.range.start) as usize;
        if self.received[..delivered].iter().any(|r| !r) {
            return Err("watermark passed an unreceived seq".into());
        }
        if delivered < n && self.received[delivered] {
            return Err("watermark stopped before a received seq".into());
        }
        if self.received.iter().filter(|&&r| r).count() as u64 != self.received_count {
            return Err("received count drifted".into());
        }
        if self.stats.packets_received - self.stats.unique_delivered != self.stats.redundant {
            return Err("redundancy accounting drifted".into());
        }
        Ok(())
    }
}
