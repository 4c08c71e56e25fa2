//! Raw run records and the metric definitions computed from them.

use serde::{Deserialize, Serialize};

use crate::client::FallbackCause;
use crate::model::{Network, VideoId};
use crate::tracker::TrackerStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: u32,
    pub network: Network,
    /// Bytes the segment owns.
    pub bytes: u64,
    /// Bytes that reached the player from each source. A fallback rescue
    /// puts CDN bytes into a PCDN-marked segment.
    pub cdn_bytes: u64,
    pub peer_bytes: u64,
    /// Download time, seconds. `None` when cut short by the viewer leaving.
    pub seconds: Option<f64>,
    /// Peer packets served from memory and from disk.
    pub memory_packets: u64,
    pub disk_packets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub client: u32,
    /// Position of this video in the client's sequence.
    pub ordinal: u32,
    pub video: VideoId,
    pub duration: f64,
    pub size: u64,
    pub hybrid: bool,
    pub startup_latency: Option<f64>,
    /// PCDN could not be set up (no holders, punches failed).
    pub pcdn_unavailable: bool,
    pub entered_pcdn: bool,
    pub fallback: Option<FallbackCause>,
    pub played: f64,
    pub rebuffer_events: u32,
    pub rebuffer_time: f64,
    pub longest_stall: f64,
    pub abandoned: bool,
    /// Downloaded bytes never played.
    pub waste_bytes: u64,
    pub player_bytes: u64,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportTotals {
    pub sessions: u64,
    pub packets_received: u64,
    /// Distinct packets received, whether or not delivered before a cancel.
    pub unique_received: u64,
    pub redundant: u64,
    pub timeouts: u64,
    pub gap_losses: u64,
    pub rejects: u64,
    pub requests_sent: u64,
    pub duplicates_requested: u64,
    /// Arrivals for a download the client had already cancelled.
    pub stale_packets: u64,
    pub protocol_violations: u64,
}

/// Every byte that reached a client, by source and fate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteLedger {
    pub cdn: u64,
    pub peer: u64,
    /// Received but never handed to a player: duplicates, stale arrivals
    /// and out-of-order data dropped on cancel.
    pub discarded: u64,
    pub player: u64,
    /// Distribution traffic into peer stores.
    pub ingest_cdn: u64,
    pub ingest_peer: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerTotals {
    pub packets_memory: u64,
    pub packets_disk: u64,
    pub rejects_not_stored: u64,
    pub rejects_corrupt: u64,
    pub chunks_repaired: u64,
    pub ingests_committed: u64,
    pub ingests_rolled_back: u64,
    pub ingests_refused: u64,
    pub evicted_videos: u64,
    /// Stored chunks failing verification at the end, or data served from
    /// a chunk whose digest did not match.
    pub checksum_violations: u64,
    /// Capacity overruns seen at any event.
    pub capacity_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub at: f64,
    pub peers_failed: u32,
    /// Clients downloading from PCDN when the failure hit.
    pub active_clients: u32,
    /// Seconds from failure to fallback, per affected client.
    pub fallback_latencies: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub scheduler: String,
    pub segment: String,
    pub hybrid: bool,
    pub videos: Vec<VideoRecord>,
    pub transport: TransportTotals,
    pub bytes: ByteLedger,
    pub peers: PeerTotals,
    pub tracker: TrackerStats,
    /// Copies confirmed into peer stores by distribution.
    pub distributed_copies: u64,
    /// Copies placed before the run.
    pub initial_copies: u64,
    pub failure: Option<FailureRecord>,
    pub prefetch_violations: u64,
    /// Fallbacks logged without a cause.
    pub unexplained_jumps: u64,
    pub cdn_cost_per_gb: f64,
    pub peer_cost_per_gb: f64,
    pub failure_stall: f64,
    pub eval_tick: f64,
    pub sim_seconds: f64,
    pub events: u64,
}

impl MetricsReport {
    /// The canonical `metrics.json` text. Field order is fixed, so equal
    /// reports give equal bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Scenario results. Rates are fractions unless named otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub scheduler: String,
    pub segment: String,
    pub hybrid: bool,
    pub videos: u64,
    pub videos_started: u64,
    pub videos_pcdn: u64,
    pub pcdn_unavailable: u64,
    pub jumps: u64,
    /// Fallbacks per video that started on PCDN.
    pub jump_rate: f64,
    /// Videos that wanted PCDN but ended on the CDN, per hybrid video.
    pub fallback_rate: f64,
    pub rebuffer_events: u64,
    /// Rebuffer events per video.
    pub rebuffer_rate: f64,
    /// Stalled seconds per 100 s of playback.
    pub rebuffer_time_per_100s: f64,
    /// Videos that never started or stalled longer than the failure limit.
    pub playback_failures: u64,
    pub startup_mean_s: f64,
    pub startup_max_s: f64,
    pub pcdn_speed_bps: f64,
    pub cdn_speed_bps: f64,
    pub speed_ratio: f64,
    pub pcdn_segment_s: f64,
    /// (received − unique) / unique over all peer transfers.
    pub redundancy_rate: f64,
    pub cache_hit_ratio: f64,
    pub cache_hit_memory: f64,
    pub cache_hit_disk: f64,
    pub peer_share: f64,
    pub cdn_bytes: u64,
    pub peer_bytes: u64,
    pub player_bytes: u64,
    pub discarded_bytes: u64,
    pub waste_bytes: u64,
    pub ingest_cdn_bytes: u64,
    pub ingest_peer_bytes: u64,
    pub cost: f64,
    pub initial_copies: u64,
    pub distributed_copies: u64,
    pub timeouts: u64,
    pub stale_packets: u64,
    pub checksum_violations: u64,
    pub corrupt_rejects: u64,
    pub capacity_violations: u64,
    /// player − (cdn + peer − discarded). Zero when bytes are conserved.
    pub conservation_error: i64,
    pub prefetch_violations: u64,
    pub unexplained_jumps: u64,
    pub failure_fallbacks: u64,
    pub failure_active_clients: u64,
    pub failure_max_latency_s: f64,
    pub sim_seconds: f64,
    pub events: u64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

pub fn compute_metrics(log: &RunLog) -> MetricsReport {
    let v = &log.videos;
    let started: Vec<&VideoRecord> = v.iter().filter(|r| r.startup_latency.is_some()).collect();
    let pcdn = v.iter().filter(|r| r.entered_pcdn).count() as u64;
    let jumps = v.iter().filter(|r| r.fallback.is_some()).count() as u64;
    let unavailable = v.iter().filter(|r| r.pcdn_unavailable).count() as u64;
    let hybrid = v.iter().filter(|r| r.hybrid).count() as u64;
    let rebuffers: u64 = v.iter().map(|r| r.rebuffer_events as u64).sum();
    let stalled: f64 = v.iter().map(|r| r.rebuffer_time).sum();
    let played: f64 = v.iter().map(|r| r.played).sum();
    let failures =
        v.iter().filter(|r| r.startup_latency.is_none() || r.longest_stall > log.failure_stall).count() as u64;
    let startups: Vec<f64> = started.iter().filter_map(|r| r.startup_latency).collect();

    let mut speed = [(0.0, 0.0); 2];
    let (mut hits_mem, mut hits_disk, mut segments) = (0u64, 0u64, 0u64);
    for seg in v.iter().filter(|r| r.hybrid).flat_map(|r| &r.segments) {
        segments += 1;
        if seg.network == Network::Pcdn {
            if seg.memory_packets >= seg.disk_packets && seg.memory_packets > 0 {
                hits_mem += 1;
            } else if seg.disk_packets > 0 {
                hits_disk += 1;
            }
        }
    }
    for seg in v.iter().flat_map(|r| &r.segments) {
        if let Some(s) = seg.seconds.filter(|s| *s > 0.0) {
            let i = (seg.network == Network::Pcdn) as usize;
            speed[i].0 += seg.bytes as f64 * 8.0;
            speed[i].1 += s;
        }
    }
    let pcdn_segments: Vec<f64> =
        v.iter().flat_map(|r| &r.segments).filter(|s| s.network == Network::Pcdn).filter_map(|s| s.seconds).collect();
    let cdn_speed = ratio(speed[0].0, speed[0].1);
    let pcdn_speed = ratio(speed[1].0, speed[1].1);
    let peer_useful: u64 = v.iter().flat_map(|r| &r.segments).map(|s| s.peer_bytes).sum();

    let b = log.bytes;
    let t = log.transport;
    let gb = 1e9;
    let cost = (b.cdn + b.ingest_cdn) as f64 / gb * log.cdn_cost_per_gb + (b.peer + b.ingest_peer) as f64 / gb * log.peer_cost_per_gb;
    let failure = log.failure.clone().unwrap_or_default();
    MetricsReport {
        scenario: log.scenario.clone(),
        seed: log.seed,
        scheduler: log.scheduler.clone(),
        segment: log.segment.clone(),
        hybrid: log.hybrid,
        videos: v.len() as u64,
        videos_started: started.len() as u64,
        videos_pcdn: pcdn,
        pcdn_unavailable: unavailable,
        jumps,
        jump_rate: ratio(jumps as f64, pcdn as f64),
        fallback_rate: ratio((jumps + unavailable) as f64, hybrid as f64),
        rebuffer_events: rebuffers,
        rebuffer_rate: ratio(rebuffers as f64, v.len() as f64),
        rebuffer_time_per_100s: 100.0 * ratio(stalled, played),
        playback_failures: failures,
        startup_mean_s: ratio(startups.iter().sum(), startups.len() as f64),
        startup_max_s: startups.iter().copied().fold(0.0, f64::max),
        pcdn_speed_bps: pcdn_speed,
        cdn_speed_bps: cdn_speed,
        speed_ratio: ratio(pcdn_speed, cdn_speed),
        pcdn_segment_s: ratio(pcdn_segments.iter().sum(), pcdn_segments.len() as f64),
        redundancy_rate: ratio(t.redundant as f64, t.unique_received as f64),
        cache_hit_ratio: ratio((hits_mem + hits_disk) as f64, segments as f64),
        cache_hit_memory: ratio(hits_mem as f64, segments as f64),
        cache_hit_disk: ratio(hits_disk as f64, segments as f64),
        peer_share: ratio(peer_useful as f64, b.player as f64),
        cdn_bytes: b.cdn,
        peer_bytes: b.peer,
        player_bytes: b.player,
        discarded_bytes: b.discarded,
        waste_bytes: v.iter().map(|r| r.waste_bytes).sum(),
        ingest_cdn_bytes: b.ingest_cdn,
        ingest_peer_bytes: b.ingest_peer,
        cost,
        initial_copies: log.initial_copies,
        distributed_copies: log.distributed_copies,
        timeouts: t.timeouts,
        stale_packets: t.stale_packets,
        checksum_violations: log.peers.checksum_violations,
        corrupt_rejects: log.peers.rejects_corrupt,
        capacity_violations: log.peers.capacity_violations,
        conservation_error: b.player as i64 - (b.cdn as i64 + b.peer as i64 - b.discarded as i64),
        prefetch_violations: log.prefetch_violations,
        unexplained_jumps: log.unexplained_jumps,
        failure_fallbacks: failure.fallback_latencies.len() as u64,
        failure_active_clients: failure.active_clients as u64,
        failure_max_latency_s: failure.fallback_latencies.iter().copied().fold(0.0, f64::max),
        sim_seconds: log.sim_seconds,
        events: log.events,
    }
}

/// Columns of every CSV this crate writes. Experiment columns come first;
/// commands leave the ones they do not fill empty.
pub const CSV_COLUMNS: &[&str] = &[
    "experiment",
    "variant",
    "completion_s",
    "transfer_redundancy",
    "delta_vs_baseline",
    "scenario",
    "seed",
    "scheduler",
    "segment",
    "hybrid",
    "videos",
    "videos_started",
    "videos_pcdn",
    "pcdn_unavailable",
    "jumps",
    "jump_rate",
    "fallback_rate",
    "rebuffer_events",
    "rebuffer_rate",
    "rebuffer_time_per_100s",
    "playback_failures",
    "startup_mean_s",
    "startup_max_s",
    "pcdn_speed_bps",
    "cdn_speed_bps",
    "speed_ratio",
    "pcdn_segment_s",
    "redundancy_rate",
    "cache_hit_ratio",
    "cache_hit_memory",
    "cache_hit_disk",
    "peer_share",
    "cdn_bytes",
    "peer_bytes",
    "player_bytes",
    "discarded_bytes",
    "waste_bytes",
    "ingest_cdn_bytes",
    "ingest_peer_bytes",
    "cost",
    "initial_copies",
    "distributed_copies",
    "timeouts",
    "stale_packets",
    "checksum_violations",
    "corrupt_rejects",
    "capacity_violations",
    "conservation_error",
    "prefetch_violations",
    "unexplained_jumps",
    "failure_fallbacks",
    "failure_active_clients",
    "failure_max_latency_s",
    "sim_seconds",
    "events",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// One CSV row from any serializable record whose field names are CSV
/// columns. Missing columns stay empty.
pub fn csv_row(record: &impl Serialize) -> String {
    let value = serde_json::to_value(record).expect("metrics serialize");
    let fields = CSV_COLUMNS.iter().map(|c| match value.get(*c) {
        None | Some(serde_json::Value::Null) => String::new(),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    });
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    let mut line = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    line.pop();
    line
}
