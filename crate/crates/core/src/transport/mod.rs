//! Pull-based multipath transfer of one byte range from several peers.

mod cc;
mod queue;
mod server;
mod session;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::model::VideoId;
use crate::time::SimTime;

pub use cc::{Aimd, CcSignal, CongestionController};
pub use queue::RequestQueue;
pub use server::{serve_request, PacketSource, ServeOutcome, Unavailable};
pub use session::{
    DeliveryEvents, PathSpec, PathState, ReceivedRecord, RttEstimator, SessionStats, TransferConfig, TransferSession,
};

/// Index of a path within its session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathId(pub u32);

/// A bundled pull request for specific packet sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRequest {
    pub video_id: VideoId,
    pub request_id: u64,
    pub path_id: PathId,
    pub packet_seqs: Vec<u64>,
    pub issued_at: SimTime,
}
