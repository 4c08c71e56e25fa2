use bytes::Bytes;

use crate::model::{Packet, VideoId};
use crate::time::SimTime;

use super::DataRequest;

/// Why a peer could not serve a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unavailable {
    NotStored,
    /// The stored chunk failed checksum verification.
    Corrupt,
}

/// Read access to whatever a server holds.
pub trait PacketSource {
    fn packet(&mut self, video: VideoId, seq: u64, now: SimTime) -> Result<Bytes, Unavailable>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServeOutcome {
    Packet(Packet),
    Reject { seq: u64, reason: Unavailable },
}

/// Answers one request in the order the client listed the packets.
pub fn serve_request(source: &mut impl PacketSource, request: &DataRequest, now: SimTime) -> Vec<ServeOutcome> {
    request
        .packet_seqs
        .iter()
        .map(|&seq| match source.packet(request.video_id, seq, now) {
            Ok(payload) => ServeOutcome::Packet(Packet { video_id: request.video_id, packet_seq: seq, payload }),
            Err(reason) => ServeOutcome::Reject { seq, reason },
        })
        .collect()
}
