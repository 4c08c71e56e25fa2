//! Scenario files. Everything has a default, so an empty file is a valid
//! (small) scenario. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{FilterLimits, SwitchThresholds};
use crate::error::{Error, Result};
use crate::model::{Catalog, VideoCatalogEntry, VideoId};
use crate::scheduler::SchedulerPolicy;
use crate::time::{SimDuration, SimTime};
use crate::tracker::{PeakWindow, ScoreWeights, TrackerConfig};
use crate::transport::TransferConfig;

use super::cdn::CdnModel;
use super::nat::NatModel;
use super::rng::{RngFactory, Stream};
use super::workload::WorkloadSpec;

fn ms(v: f64) -> SimDuration {
    SimDuration::from_secs_f64(v / 1e3)
}

fn secs(v: f64) -> SimDuration {
    SimDuration::from_secs_f64(v)
}

fn check(ok: bool, field: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(field, reason))
    }
}

fn check_range(r: (f64, f64), field: &str) -> Result<()> {
    check(r.0.is_finite() && r.1.is_finite() && r.0 >= 0.0 && r.0 <= r.1, field, "expected [low, high] with 0 <= low <= high")
}

/// Segment length: seconds, or `"full"` for whole-video preload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegmentLength {
    Seconds(f64),
    Full(FullVideo),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullVideo {
    Full,
}

impl SegmentLength {
    pub const FULL: Self = SegmentLength::Full(FullVideo::Full);

    /// Segment length in seconds for a video of `duration`.
    pub fn resolve(&self, duration: f64) -> f64 {
        match self {
            SegmentLength::Seconds(s) => *s,
            SegmentLength::Full(_) => duration.max(1e-3),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SegmentLength::Seconds(s) => format!("{s}"),
            SegmentLength::Full(_) => "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogSection {
    /// CSV catalog (`video_id,duration_s,bitrate_bps`), relative to the
    /// config file. When absent a catalog is generated.
    pub file: Option<String>,
    pub videos: usize,
    pub duration_s: (f64, f64),
    pub bitrate_bps: (u64, u64),
    pub segment_s: SegmentLength,
    pub chunk_bytes: u64,
    pub payload_bytes: u32,
}

impl Default for CatalogSection {
    fn default() -> Self {
        Self {
            file: None,
            videos: 40,
            duration_s: (30.0, 60.0),
            bitrate_bps: (400_000, 600_000),
            segment_s: SegmentLength::Seconds(10.0),
            chunk_bytes: 1_000_000,
            payload_bytes: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSection {
    pub name: String,
    pub client_weight: f64,
    pub peer_weight: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self { name: "region".into(), client_weight: 1.0, peer_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VendorSection {
    pub name: String,
    pub weight: f64,
}

impl Default for VendorSection {
    fn default() -> Self {
        Self { name: "vendor".into(), weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassFailure {
    pub at_s: f64,
    /// Share of peers taken offline, lowest ids first after shuffling.
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Stores start empty; content arrives only through distribution.
    None,
    /// `initial_copies` copies per video on distinct random peers.
    Uniform,
    /// `copy_budget` copies in total, each on a random (video, peer) pair.
    UniformBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeersSection {
    pub count: u32,
    pub uplink_bps: (u64, u64),
    pub capacity_bytes: u64,
    pub placement: Placement,
    pub initial_copies: u32,
    pub copy_budget: u64,
    pub failure: Option<MassFailure>,
    /// Chunks corrupted at start, caught by per-packet verification.
    pub corrupt_chunks: u32,
}

impl Default for PeersSection {
    fn default() -> Self {
        Self {
            count: 16,
            uplink_bps: (4_000_000, 10_000_000),
            capacity_bytes: 200_000_000,
            placement: Placement::Uniform,
            initial_copies: 4,
            copy_budget: 0,
            failure: None,
            corrupt_chunks: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinksSection {
    /// Client access medium (WLAN) rate.
    pub client_bandwidth_bps: u64,
    pub frame_overhead_us: u64,
    pub half_duplex: bool,
    /// One-way delay between a client and a peer in the same region.
    pub same_region_delay_ms: (f64, f64),
    pub cross_region_delay_ms: (f64, f64),
    /// Per-path loss, drawn uniformly per client/peer pair.
    pub loss: (f64, f64),
    /// One-way delay of tracker messages.
    pub tracker_delay_ms: f64,
}

impl Default for LinksSection {
    fn default() -> Self {
        Self {
            client_bandwidth_bps: 50_000_000,
            frame_overhead_us: 100,
            half_duplex: true,
            same_region_delay_ms: (5.0, 20.0),
            cross_region_delay_ms: (30.0, 60.0),
            loss: (0.0, 0.0),
            tracker_delay_ms: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdnSection {
    pub connect_ms: f64,
    pub request_ms: f64,
    pub rate_bps: u64,
    pub block_bytes: u64,
    /// `[start_s, end_s]` windows during which the CDN sends nothing.
    pub outages: Vec<(f64, f64)>,
    /// Rate at which peers pull distributed copies from the CDN.
    pub ingest_rate_bps: u64,
}

impl Default for CdnSection {
    fn default() -> Self {
        Self { connect_ms: 200.0, request_ms: 40.0, rate_bps: 8_000_000, block_bytes: 64 * 1024, outages: Vec::new(), ingest_rate_bps: 20_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub cdn_per_gb: f64,
    pub peer_per_gb: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { cdn_per_gb: 1.0, peer_per_gb: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NatClassWeights {
    pub open: f64,
    pub full_cone: f64,
    pub restricted: f64,
    pub port_restricted: f64,
    pub symmetric: f64,
}

impl Default for NatClassWeights {
    fn default() -> Self {
        let w = NatModel::default().class_weights;
        Self { open: w[0], full_cone: w[1], restricted: w[2], port_restricted: w[3], symmetric: w[4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NatSection {
    pub punch_mean_ms: f64,
    pub punch_jitter_ms: f64,
    pub failure_probability: f64,
    pub classes: NatClassWeights,
}

impl Default for NatSection {
    fn default() -> Self {
        Self { punch_mean_ms: 200.0, punch_jitter_ms: 40.0, failure_probability: 0.02, classes: NatClassWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    pub clients: u32,
    pub arrival_rate: f64,
    pub zipf_exponent: f64,
    /// Chance of watching another ten seconds.
    pub continue_probability: f64,
    pub think_s: (f64, f64),
    /// No new video starts after this; running ones finish.
    pub horizon_s: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self { clients: 20, arrival_rate: 0.5, zipf_exponent: 1.0, continue_probability: 0.95, think_s: (1.0, 4.0), horizon_s: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdsSection {
    pub min_remaining_segments: u32,
    pub min_bandwidth_factor: f64,
    pub connect_timeout_s: f64,
    pub min_buffer_enter_s: f64,
    pub min_buffer_stay_s: f64,
    pub min_rate_factor: f64,
    pub rate_window_s: f64,
    pub eval_tick_ms: f64,
    pub startup_buffer_s: f64,
    pub resume_buffer_s: f64,
    /// A stall longer than this counts as a playback failure.
    pub failure_stall_s: f64,
    pub rtt_max_ms: f64,
    pub loss_max: f64,
    pub retention_s: f64,
}

impl Default for ThresholdsSection {
    fn default() -> Self {
        let t = SwitchThresholds::default();
        let f = FilterLimits::default();
        Self {
            min_remaining_segments: t.min_remaining_segments,
            min_bandwidth_factor: t.min_bandwidth_factor,
            connect_timeout_s: t.connect_timeout.as_secs_f64(),
            min_buffer_enter_s: t.min_buffer_enter,
            min_buffer_stay_s: t.min_buffer_stay,
            min_rate_factor: t.min_rate_factor,
            rate_window_s: t.rate_window.as_secs_f64(),
            eval_tick_ms: t.eval_tick.as_millis_f64(),
            startup_buffer_s: 1.0,
            resume_buffer_s: 1.0,
            failure_stall_s: 8.0,
            rtt_max_ms: f.rtt_max.as_millis_f64(),
            loss_max: f.loss_max,
            retention_s: 120.0,
        }
    }
}

impl ThresholdsSection {
    pub fn switch(&self) -> SwitchThresholds {
        SwitchThresholds {
            min_remaining_segments: self.min_remaining_segments,
            min_bandwidth_factor: self.min_bandwidth_factor,
            connect_timeout: secs(self.connect_timeout_s),
            min_buffer_enter: self.min_buffer_enter_s,
            min_buffer_stay: self.min_buffer_stay_s,
            min_rate_factor: self.min_rate_factor,
            rate_window: secs(self.rate_window_s),
            eval_tick: ms(self.eval_tick_ms),
        }
    }

    pub fn filter(&self) -> FilterLimits {
        FilterLimits { rtt_max: ms(self.rtt_max_ms), loss_max: self.loss_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub policy: SchedulerPolicy,
    pub bundle_size: usize,
    pub reorder_window: Option<u64>,
    pub initial_budget: u32,
    pub max_budget: u32,
    pub min_rto_ms: f64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let t = TransferConfig::default();
        Self {
            policy: t.policy,
            bundle_size: t.bundle_size,
            reorder_window: t.reorder_window,
            initial_budget: t.initial_budget,
            max_budget: t.max_budget,
            min_rto_ms: t.min_rto.as_millis_f64(),
        }
    }
}

impl SchedulerSection {
    pub fn transfer(&self) -> TransferConfig {
        TransferConfig {
            bundle_size: self.bundle_size,
            min_rto: ms(self.min_rto_ms),
            initial_budget: self.initial_budget,
            max_budget: self.max_budget,
            reorder_window: self.reorder_window,
            policy: self.policy,
        }
    }
}

/// `scheduler = "minrtt"` is shorthand for a section with only the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SchedulerField {
    Name(SchedulerPolicy),
    Section(SchedulerSection),
}

fn de_scheduler<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SchedulerSection, D::Error> {
    Ok(match SchedulerField::deserialize(d)? {
        SchedulerField::Name(policy) => SchedulerSection { policy, ..Default::default() },
        SchedulerField::Section(s) => s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleSection {
    pub length_s: f64,
    pub view_threshold: u64,
    pub super_popular: Option<u64>,
    pub distribution: bool,
    pub distribution_share: f64,
    pub peak_windows: Vec<PeakWindow>,
    pub day_start_hour: f64,
    pub query_n: usize,
    pub return_m: usize,
    pub weights: ScoreWeights,
    pub heartbeat_s: f64,
    pub liveness_s: f64,
}

impl Default for CycleSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            length_s: t.cycle.as_secs_f64(),
            view_threshold: t.view_threshold,
            super_popular: t.super_popular,
            distribution: t.distribution,
            distribution_share: t.distribution_share,
            peak_windows: t.peak_windows,
            day_start_hour: t.day_start_hour,
            query_n: t.query_n,
            return_m: t.return_m,
            weights: t.weights,
            heartbeat_s: t.heartbeat_interval.as_secs_f64(),
            liveness_s: t.liveness.as_secs_f64(),
        }
    }
}

impl CycleSection {
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            query_n: self.query_n,
            return_m: self.return_m,
            weights: self.weights,
            heartbeat_interval: secs(self.heartbeat_s),
            liveness: secs(self.liveness_s),
            cycle: secs(self.length_s),
            view_threshold: self.view_threshold,
            super_popular: self.super_popular,
            peak_windows: self.peak_windows.clone(),
            day_start_hour: self.day_start_hour,
            distribution_share: self.distribution_share,
            distribution: self.distribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Log every evaluation tick. Large.
    pub log_ticks: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { log_ticks: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// `false` runs every client on the CDN alone.
    pub hybrid: bool,
    pub catalog: CatalogSection,
    pub regions: Vec<RegionSection>,
    pub vendors: Vec<VendorSection>,
    pub peers: PeersSection,
    pub links: LinksSection,
    pub cdn: CdnSection,
    pub cost: CostSection,
    pub nat: NatSection,
    pub workload: WorkloadSection,
    pub thresholds: ThresholdsSection,
    #[serde(deserialize_with = "de_scheduler")]
    pub scheduler: SchedulerSection,
    pub cycle: CycleSection,
    pub output: OutputSection,
    /// Videos of the catalog file, resolved at load time.
    #[serde(skip)]
    pub loaded_catalog: Option<Vec<VideoCatalogEntry>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            hybrid: true,
            catalog: CatalogSection::default(),
            regions: vec![RegionSection { name: "east".into(), ..Default::default() }, RegionSection { name: "west".into(), ..Default::default() }],
            vendors: vec![VendorSection { name: "a".into(), weight: 1.0 }, VendorSection { name: "b".into(), weight: 1.0 }],
            peers: PeersSection::default(),
            links: LinksSection::default(),
            cdn: CdnSection::default(),
            cost: CostSection::default(),
            nat: NatSection::default(),
            workload: WorkloadSection::default(),
            thresholds: ThresholdsSection::default(),
            scheduler: SchedulerSection::default(),
            cycle: CycleSection::default(),
            output: OutputSection::default(),
            loaded_catalog: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml { what: "scenario".into(), source: e })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a scenario file, resolving a catalog file relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Toml { what: path.display().to_string(), source: e })?;
        if let Some(file) = &cfg.catalog.file {
            let p = path.parent().unwrap_or(Path::new(".")).join(file);
            let csv = std::fs::read_to_string(&p)?;
            cfg.loaded_catalog = Some(Catalog::parse_csv(&csv)?.entries);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.catalog;
        if c.file.is_none() {
            check(c.videos > 0, "catalog.videos", "must be positive")?;
            check_range(c.duration_s, "catalog.duration_s")?;
            check(c.duration_s.0 > 0.0, "catalog.duration_s", "videos need a positive duration")?;
            check(c.bitrate_bps.0 > 0 && c.bitrate_bps.0 <= c.bitrate_bps.1, "catalog.bitrate_bps", "expected [low, high] with 0 < low <= high")?;
        } else if self.loaded_catalog.is_none() {
            return Err(Error::invalid("catalog.file", "catalog files are resolved by loading the scenario from a path"));
        }
        if let SegmentLength::Seconds(s) = c.segment_s {
            check(s > 0.0 && s.is_finite(), "catalog.segment_s", "must be positive or \"full\"")?;
        }
        check(c.chunk_bytes > 0, "catalog.chunk_bytes", "must be positive")?;
        check(c.payload_bytes > 0 && (c.payload_bytes as u64) <= c.chunk_bytes, "catalog.payload_bytes", "must be positive and fit in a chunk")?;

        check(!self.regions.is_empty(), "regions", "at least one region is required")?;
        for (i, r) in self.regions.iter().enumerate() {
            check(r.client_weight >= 0.0 && r.peer_weight >= 0.0, &format!("regions[{i}].client_weight"), "weights must be non-negative")?;
        }
        check(self.regions.iter().any(|r| r.client_weight > 0.0), "regions", "some region needs clients")?;
        check(self.regions.iter().any(|r| r.peer_weight > 0.0), "regions", "some region needs peers")?;
        check(!self.vendors.is_empty(), "vendors", "at least one vendor is required")?;
        for (i, v) in self.vendors.iter().enumerate() {
            check(v.weight >= 0.0, &format!("vendors[{i}].weight"), "must be non-negative")?;
        }

        let p = &self.peers;
        check(p.count <= 100_000, "peers.count", "too many peers")?;
        check(p.uplink_bps.0 > 0 && p.uplink_bps.0 <= p.uplink_bps.1, "peers.uplink_bps", "expected [low, high] with 0 < low <= high")?;
        if let Some(f) = p.failure {
            check(f.at_s >= 0.0 && (0.0..=1.0).contains(&f.fraction), "peers.failure", "at_s >= 0 and fraction in [0, 1]")?;
        }

        let l = &self.links;
        check(l.client_bandwidth_bps > 0, "links.client_bandwidth_bps", "must be positive")?;
        check_range(l.same_region_delay_ms, "links.same_region_delay_ms")?;
        check_range(l.cross_region_delay_ms, "links.cross_region_delay_ms")?;
        check_range(l.loss, "links.loss")?;
        check(l.loss.1 < 1.0, "links.loss", "loss must stay below 1")?;
        check(l.tracker_delay_ms >= 0.0, "links.tracker_delay_ms", "must be non-negative")?;

        check(self.cdn.rate_bps > 0 && self.cdn.ingest_rate_bps > 0, "cdn.rate_bps", "rates must be positive")?;
        check(self.cdn.connect_ms >= 0.0 && self.cdn.request_ms >= 0.0, "cdn.connect_ms", "must be non-negative")?;
        for (i, o) in self.cdn.outages.iter().enumerate() {
            check_range(*o, &format!("cdn.outages[{i}]"))?;
        }
        check(self.cost.cdn_per_gb >= 0.0 && self.cost.peer_per_gb >= 0.0, "cost", "unit costs must be non-negative")?;

        let n = &self.nat;
        check(n.punch_mean_ms >= 0.0 && n.punch_jitter_ms >= 0.0, "nat.punch_mean_ms", "must be non-negative")?;
        check((0.0..=1.0).contains(&n.failure_probability), "nat.failure_probability", "must be in [0, 1]")?;
        let w = self.nat_model().class_weights;
        check(w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0, "nat.classes", "weights must be non-negative, not all zero")?;

        let wl = &self.workload;
        check(wl.clients > 0, "workload.clients", "must be positive")?;
        check(wl.arrival_rate > 0.0, "workload.arrival_rate", "must be positive")?;
        check(wl.zipf_exponent >= 0.0, "workload.zipf_exponent", "must be non-negative")?;
        check(wl.continue_probability > 0.0 && wl.continue_probability <= 1.0, "workload.continue_probability", "must be in (0, 1]")?;
        check_range(wl.think_s, "workload.think_s")?;
        check(wl.horizon_s > 0.0, "workload.horizon_s", "must be positive")?;

        let t = &self.thresholds;
        self.thresholds.switch().validate()?;
        check(t.startup_buffer_s >= 0.0 && t.resume_buffer_s >= 0.0, "thresholds.startup_buffer_s", "must be non-negative")?;
        check(t.failure_stall_s > 0.0, "thresholds.failure_stall_s", "must be positive")?;
        check(t.retention_s >= 0.0, "thresholds.retention_s", "must be non-negative")?;

        let s = &self.scheduler;
        check(s.bundle_size > 0, "scheduler.bundle_size", "must be positive")?;
        check(s.initial_budget > 0 && s.initial_budget <= s.max_budget, "scheduler.initial_budget", "must be positive and at most max_budget")?;
        check(s.reorder_window != Some(0), "scheduler.reorder_window", "must be positive when set")?;
        check(s.min_rto_ms > 0.0, "scheduler.min_rto_ms", "must be positive")?;

        check(self.cycle.length_s > 0.0, "cycle.length_s", "must be positive")?;
        check(self.cycle.heartbeat_s > 0.0, "cycle.heartbeat_s", "must be positive")?;
        self.cycle.tracker().validate()?;
        Ok(())
    }

    pub fn nat_model(&self) -> NatModel {
        let c = &self.nat.classes;
        NatModel {
            punch_mean: ms(self.nat.punch_mean_ms),
            punch_jitter: ms(self.nat.punch_jitter_ms),
            failure_probability: self.nat.failure_probability,
            class_weights: [c.open, c.full_cone, c.restricted, c.port_restricted, c.symmetric],
        }
    }

    pub fn cdn_model(&self) -> CdnModel {
        CdnModel {
            connect_delay: ms(self.cdn.connect_ms),
            request_delay: ms(self.cdn.request_ms),
            rate_bps: self.cdn.rate_bps,
            block_bytes: self.cdn.block_bytes,
            outages: self.cdn.outages.iter().map(|o| (SimTime::from_secs_f64(o.0), SimTime::from_secs_f64(o.1))).collect(),
        }
    }

    pub fn workload_spec(&self, videos: usize) -> WorkloadSpec {
        let w = &self.workload;
        WorkloadSpec {
            videos,
            zipf_exponent: w.zipf_exponent,
            clients: w.clients,
            arrival_rate: w.arrival_rate,
            continue_probability: w.continue_probability,
            think_s: w.think_s,
            region_weights: self.regions.iter().map(|r| r.client_weight).collect(),
        }
    }

    /// The catalog: the loaded file, or one generated from the seed.
    pub fn build_catalog(&self) -> Result<Vec<VideoCatalogEntry>> {
        if let Some(c) = &self.loaded_catalog {
            return Ok(c.clone());
        }
        use rand::Rng;
        let c = &self.catalog;
        let mut rng = RngFactory::new(self.seed).stream(Stream::Catalog, 0);
        (0..c.videos)
            .map(|i| {
                let d = if c.duration_s.1 > c.duration_s.0 { rng.random_range(c.duration_s.0..c.duration_s.1) } else { c.duration_s.0 };
                let b = rng.random_range(c.bitrate_bps.0..=c.bitrate_bps.1);
                // whole milliseconds keep the CSV round trip exact
                VideoCatalogEntry::new(VideoId(i as u32), (d * 1000.0).round() / 1000.0, b)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_scenario() {
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ScenarioConfig::from_toml("[links]\nlatency = 3\n").unwrap_err();
        assert!(e.to_string().contains("latency"), "{e}");
        assert!(ScenarioConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let e = ScenarioConfig::from_toml("[workload]\nclients = 0\n").unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("workload.clients"), "{e}");
        let e = ScenarioConfig::from_toml("[[regions]]\nname = \"x\"\nclient_weight = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("regions[0]"), "{e}");
    }

    #[test]
    fn scheduler_accepts_name_or_section() {
        let a = ScenarioConfig::from_toml("scheduler = \"minrtt\"\n").unwrap();
        assert_eq!(a.scheduler.policy, SchedulerPolicy::MINRTT);
        let b = ScenarioConfig::from_toml("[scheduler]\npolicy = \"roundrobin\"\nbundle_size = 1\n").unwrap();
        assert_eq!((b.scheduler.policy, b.scheduler.bundle_size), (SchedulerPolicy::ROUNDROBIN, 1));
        let c = ScenarioConfig::from_toml("[catalog]\nsegment_s = \"full\"\n").unwrap();
        assert_eq!(c.catalog.segment_s, SegmentLength::FULL);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = ScenarioConfig::default();
        cfg.peers.failure = Some(MassFailure { at_s: 10.0, fraction: 0.5 });
        cfg.cdn.outages.push((1.0, 2.0));
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
