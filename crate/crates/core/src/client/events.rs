use serde::{Deserialize, Serialize};

use crate::model::{Network, VideoId};

use super::switching::{EntryCheck, FallbackCause, SwitchMode};

/// One line of a client's JSON-lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEvent {
    /// Simulated seconds.
    pub t: f64,
    pub client: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    VideoStart { video: VideoId, segments: u32, watch_target: Option<f64> },
    Startup { video: VideoId, latency: f64 },
    PcdnReady { video: VideoId, peers: usize, latency: f64, reused: usize },
    PcdnUnavailable { video: VideoId, reason: String },
    EntryBlocked { video: VideoId, segment: u32, check: EntryCheck },
    Mode { video: VideoId, from: SwitchMode, to: SwitchMode, cause: Option<FallbackCause> },
    SegmentStart { video: VideoId, segment: u32, network: Network },
    SegmentDone { video: VideoId, segment: u32, network: Network, cdn_bytes: u64, pcdn_bytes: u64, seconds: f64 },
    RebufferBegin { video: VideoId, position: f64 },
    RebufferEnd { video: VideoId, stalled: f64 },
    Tick { video: VideoId, mode: SwitchMode, buffer: f64, rate_bps: Option<f64> },
    VideoEnd { video: VideoId, position: f64, abandoned: bool, waste_bytes: u64, rebuffers: u32 },
}
