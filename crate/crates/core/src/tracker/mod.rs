//! The centralized control plane: peer registry and liveness, the
//! video-to-peer index, scored peer lookup, popularity-driven distribution
//! of extra copies, and bandwidth allocation planning.

pub mod allocation;
mod index;
mod popularity;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NatClass, PeerId, RegionId, VideoId};
use crate::time::{SimDuration, SimTime};

pub use index::TrackerIndex;
pub use popularity::PopularityLedger;

/// Weights of the peer scoring function. Each term lies in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreWeights {
    pub bandwidth: f64,
    pub distance: f64,
    pub cpu: f64,
    pub nat: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { bandwidth: 0.4, distance: 0.3, cpu: 0.2, nat: 0.1 }
    }
}

/// A window of the day, in hours, during which distribution is suspended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakWindow {
    pub start_hour: f64,
    pub end_hour: f64,
}

impl PeakWindow {
    fn contains(&self, hour: f64) -> bool {
        if self.start_hour <= self.end_hour {
            hour >= self.start_hour && hour < self.end_hour
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Candidates fetched from the index per lookup.
    pub query_n: usize,
    /// Peers returned to the client.
    pub return_m: usize,
    pub weights: ScoreWeights,
    pub heartbeat_interval: SimDuration,
    pub liveness: SimDuration,
    pub cycle: SimDuration,
    pub view_threshold: u64,
    /// Views that override peak-hour suspension. Defaults to ten times the
    /// threshold.
    pub super_popular: Option<u64>,
    pub peak_windows: Vec<PeakWindow>,
    /// Hour of day at simulated time zero.
    pub day_start_hour: f64,
    /// Fraction of a region's peer uplink budgeted for distributing copies.
    pub distribution_share: f64,
    /// Disable popularity-driven distribution altogether.
    pub distribution: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            query_n: 20,
            return_m: 5,
            weights: ScoreWeights::default(),
            heartbeat_interval: SimDuration::from_secs(30),
            liveness: SimDuration::from_secs(90),
            cycle: SimDuration::from_secs(300),
            view_threshold: 100,
            super_popular: None,
            peak_windows: Vec::new(),
            day_start_hour: 0.0,
            distribution_share: 0.1,
            distribution: true,
        }
    }
}

impl TrackerConfig {
    pub fn super_popular(&self) -> u64 {
        self.super_popular.unwrap_or(self.view_threshold * 10)
    }

    pub fn is_peak(&self, now: SimTime) -> bool {
        let hour = (self.day_start_hour + now.as_secs_f64() / 3600.0).rem_euclid(24.0);
        self.peak_windows.iter().any(|w| w.contains(hour))
    }

    pub fn validate(&self) -> Result<()> {
        if self.return_m == 0 || self.query_n < self.return_m {
            return Err(Error::invalid("tracker.query_n", "must be at least return_m, which must be positive"));
        }
        if self.cycle.as_micros() == 0 || self.heartbeat_interval.as_micros() == 0 {
            return Err(Error::invalid("tracker.cycle", "cycle and heartbeat interval must be positive"));
        }
        if self.liveness < self.heartbeat_interval {
            return Err(Error::invalid("tracker.liveness", "must cover at least one heartbeat interval"));
        }
        if !(0.0..=1.0).contains(&self.distribution_share) {
            return Err(Error::invalid("tracker.distribution_share", "must lie in [0, 1]"));
        }
        let w = self.weights;
        if [w.bandwidth, w.distance, w.cpu, w.nat].iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid("tracker.weights", "weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub peer_id: PeerId,
    pub region: RegionId,
    pub vendor: u32,
    pub nat: NatClass,
    pub last_heartbeat: SimTime,
    /// Fractions in [0, 1].
    pub bandwidth_utilization: f64,
    pub disk_utilization: f64,
    pub cpu_utilization: f64,
    pub uplink_bps: u64,
    pub disk_free: u64,
}

/// The fields a peer reports on every heartbeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatReport {
    pub peer_id: PeerId,
    pub region: RegionId,
    pub vendor: u32,
    pub nat: NatClass,
    pub bandwidth_utilization: f64,
    pub disk_utilization: f64,
    pub cpu_utilization: f64,
    pub uplink_bps: u64,
    pub disk_free: u64,
    /// Videos dropped from the store since the previous beat.
    pub removed: Vec<VideoId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "peer")]
pub enum CopySource {
    Cdn,
    Peer(PeerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCommand {
    pub video_id: VideoId,
    pub source: CopySource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatReply {
    pub cache_commands: Vec<CacheCommand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionDecision {
    pub video_id: VideoId,
    pub target_peer: PeerId,
    pub region: RegionId,
}

/// Who is asking for peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientProfile {
    pub region: RegionId,
    pub nat: NatClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPeer {
    pub peer_id: PeerId,
    pub region: RegionId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerStats {
    pub locates: u64,
    pub empty_locates: u64,
    pub heartbeats: u64,
    pub evictions: u64,
    pub decisions: u64,
    pub deferred: u64,
    pub confirms: u64,
    /// Store confirmations that matched no issued command.
    pub anomalies: u64,
}

/// Weighted score of a peer for a client. Higher is better.
pub fn score_peer(weights: &ScoreWeights, peer: &PeerRecord, client: ClientProfile) -> f64 {
    let idle = |u: f64| 1.0 - u.clamp(0.0, 1.0);
    weights.bandwidth * idle(peer.bandwidth_utilization)
        + weights.distance * if peer.region == client.region { 1.0 } else { 0.0 }
        + weights.cpu * idle(peer.cpu_utilization)
        + weights.nat * if peer.nat.compatible(client.nat) { 1.0 } else { 0.0 }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    sizes: BTreeMap<VideoId, u64>,
    peers: BTreeMap<PeerId, PeerRecord>,
    index: TrackerIndex,
    ledger: PopularityLedger,
    pending: BTreeMap<PeerId, Vec<VideoId>>,
    issued: BTreeSet<(PeerId, VideoId)>,
    deferred: BTreeSet<(RegionId, VideoId)>,
    rotation: BTreeMap<VideoId, usize>,
    stats: TrackerStats,
}

impl Tracker {
    /// `sizes` gives the byte size of every known video.
    pub fn new(config: TrackerConfig, sizes: BTreeMap<VideoId, u64>) -> Self {
        Self {
            config,
            sizes,
            peers: BTreeMap::new(),
            index: TrackerIndex::default(),
            ledger: PopularityLedger::default(),
            pending: BTreeMap::new(),
            issued: BTreeSet::new(),
            deferred: BTreeSet::new(),
            rotation: BTreeMap::new(),
            stats: TrackerStats::default(),
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn index(&self) -> &TrackerIndex {
        &self.index
    }

    pub fn ledger(&self) -> &PopularityLedger {
        &self.ledger
    }

    pub fn stats(&self) -> TrackerStats {
        self.stats
    }

    pub fn peer(&self, id: PeerId) -> Option<&PeerRecord> {
        self.peers.get(&id)
    }

    pub fn active_peers(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values()
    }

    pub fn pending_for(&self, peer: PeerId) -> &[VideoId] {
        self.pending.get(&peer).map_or(&[], Vec::as_slice)
    }

    fn is_live(&self, rec: &PeerRecord, now: SimTime) -> bool {
        now.since(rec.last_heartbeat) <= self.config.liveness
    }

    /// Adds a peer to the active pool (or refreshes it).
    pub fn register(&mut self, report: &HeartbeatReport, now: SimTime) {
        let rec = PeerRecord {
            peer_id: report.peer_id,
            region: report.region,
            vendor: report.vendor,
            nat: report.nat,
            last_heartbeat: now,
            bandwidth_utilization: report.bandwidth_utilization,
            disk_utilization: report.disk_utilization,
            cpu_utilization: report.cpu_utilization,
            uplink_bps: report.uplink_bps,
            disk_free: report.disk_free,
        };
        self.peers.insert(report.peer_id, rec);
    }

    /// Removes peers whose last heartbeat is older than the liveness
    /// window, together with their index entries and queued work.
    pub fn expire(&mut self, now: SimTime) -> Vec<PeerId> {
        let dead: Vec<PeerId> = self.peers.values().filter(|r| !self.is_live(r, now)).map(|r| r.peer_id).collect();
        for p in &dead {
            self.peers.remove(p);
            self.index.remove_peer(*p);
            self.pending.remove(p);
            self.issued.retain(|(q, _)| q != p);
        }
        self.stats.evictions += dead.len() as u64;
        dead
    }

    /// Counts a view and returns up to `return_m` live holders, best first.
    pub fn locate(&mut self, video: VideoId, client: ClientProfile, now: SimTime) -> Vec<ScoredPeer> {
        self.expire(now);
        self.ledger.record_view(video);
        self.stats.locates += 1;
        let holders: Vec<&PeerRecord> = self.index.peers_for(video).filter_map(|p| self.peers.get(&p)).collect();
        let n = self.config.query_n;
        let candidates: Vec<&PeerRecord> = if holders.len() <= n {
            holders
        } else {
            let start = self.rotation.entry(video).or_insert(0);
            let from = *start % holders.len();
            *start = start.wrapping_add(n);
            (0..n).map(|k| holders[(from + k) % holders.len()]).collect()
        };
        let mut scored: Vec<ScoredPeer> = candidates
            .iter()
            .map(|r| ScoredPeer { peer_id: r.peer_id, region: r.region, score: score_peer(&self.config.weights, r, client) })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.peer_id.cmp(&b.peer_id)));
        scored.truncate(self.config.return_m);
        if scored.is_empty() {
            self.stats.empty_locates += 1;
        }
        scored
    }

    /// Refreshes a peer's record and hands it any queued cache commands.
    pub fn on_heartbeat(&mut self, report: &HeartbeatReport, now: SimTime) -> Result<HeartbeatReply> {
        if !self.peers.contains_key(&report.peer_id) {
            return Err(Error::UnknownPeer(report.peer_id.0));
        }
        self.stats.heartbeats += 1;
        self.register(report, now);
        for v in &report.removed {
            self.index.remove(*v, report.peer_id);
        }
        self.expire(now);
        let peak = self.config.is_peak(now);
        let region = report.region;
        let queued = self.pending.remove(&report.peer_id).unwrap_or_default();
        let mut reply = HeartbeatReply::default();
        for video in queued {
            let source = if peak {
                CopySource::Cdn
            } else {
                self.index
                    .peers_for(video)
                    .filter(|&p| p != report.peer_id)
                    .filter_map(|p| self.peers.get(&p))
                    .filter(|r| r.region == region)
                    .min_by(|a, b| a.bandwidth_utilization.total_cmp(&b.bandwidth_utilization).then(a.peer_id.cmp(&b.peer_id)))
                    .map_or(CopySource::Cdn, |r| CopySource::Peer(r.peer_id))
            };
            self.issued.insert((report.peer_id, video));
            reply.cache_commands.push(CacheCommand { video_id: video, source });
        }
        Ok(reply)
    }

    /// A peer finished storing a video.
    pub fn on_store_confirm(&mut self, peer: PeerId, video: VideoId) {
        self.stats.confirms += 1;
        if !self.issued.remove(&(peer, video)) && !self.index.holds(video, peer) {
            self.stats.anomalies += 1;
        }
        if self.peers.contains_key(&peer) {
            self.index.insert(video, peer);
        }
    }

    /// Seeds the index without the command round trip, for initial
    /// placement.
    pub fn seed_copy(&mut self, peer: PeerId, video: VideoId) {
        if self.peers.contains_key(&peer) {
            self.index.insert(video, peer);
        }
    }

    /// Closes the current popularity cycle and queues extra copies of
    /// videos that passed the view threshold and grew since last cycle.
    pub fn end_cycle(&mut self, now: SimTime) -> Vec<DistributionDecision> {
        self.expire(now);
        let mut decisions = Vec::new();
        if self.config.distribution {
            let peak = self.config.is_peak(now);
            let eligible: Vec<(VideoId, u64)> = self
                .ledger
                .current_counts()
                .iter()
                .filter(|(v, &c)| c >= self.config.view_threshold && c > self.ledger.previous(**v))
                .filter(|(_, &c)| !peak || c >= self.config.super_popular())
                .map(|(v, c)| (*v, *c))
                .collect();
            let total: u64 = eligible.iter().map(|e| e.1).sum();
            let regions: BTreeSet<RegionId> = self.peers.values().map(|r| r.region).collect();
            let cycle_secs = self.config.cycle.as_secs_f64();
            let mut reserved: BTreeMap<PeerId, u64> = BTreeMap::new();
            let mut wanted: Vec<(RegionId, VideoId, usize)> = Vec::new();
            for &region in &regions {
                let region_bw: f64 = self.peers.values().filter(|r| r.region == region).map(|r| r.uplink_bps as f64).sum::<f64>()
                    * self.config.distribution_share;
                for &(video, count) in &eligible {
                    let size = self.sizes.get(&video).copied().unwrap_or(0);
                    let per_copy = (size as f64 * 8.0 / cycle_secs).max(1.0);
                    let copies = (region_bw * count as f64 / total as f64 / per_copy).floor().max(1.0) as usize;
                    wanted.push((region, video, copies));
                }
            }
            if !peak {
                let retry = std::mem::take(&mut self.deferred);
                for (region, video) in retry {
                    if !wanted.iter().any(|w| w.0 == region && w.1 == video) {
                        wanted.push((region, video, 1));
                    }
                }
            }
            for (region, video, copies) in wanted {
                let size = self.sizes.get(&video).copied().unwrap_or(0);
                let mut pool: Vec<&PeerRecord> = self
                    .peers
                    .values()
                    .filter(|r| r.region == region && !self.index.holds(video, r.peer_id))
                    .filter(|r| !self.pending.get(&r.peer_id).is_some_and(|q| q.contains(&video)))
                    .filter(|r| !self.issued.contains(&(r.peer_id, video)))
                    .filter(|r| r.disk_free.saturating_sub(reserved.get(&r.peer_id).copied().unwrap_or(0)) >= size)
                    .collect();
                pool.sort_by(|a, b| {
                    a.disk_utilization
                        .total_cmp(&b.disk_utilization)
                        .then(a.bandwidth_utilization.total_cmp(&b.bandwidth_utilization))
                        .then(a.peer_id.cmp(&b.peer_id))
                });
                if pool.is_empty() {
                    self.deferred.insert((region, video));
                    self.stats.deferred += 1;
                    continue;
                }
                for r in pool.into_iter().take(copies) {
                    *reserved.entry(r.peer_id).or_insert(0) += size;
                    decisions.push(DistributionDecision { video_id: video, target_peer: r.peer_id, region });
                }
            }
            for d in &decisions {
                self.pending.entry(d.target_peer).or_default().push(d.video_id);
            }
            self.stats.decisions += decisions.len() as u64;
        }
        self.ledger.close_cycle();
        decisions
    }
}
