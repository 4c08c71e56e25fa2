//! Peer server: a passive chunk store that answers data requests, ingests
//! videos on the tracker's command and reports its state by heartbeat.

mod journal;
mod store;

use serde::{Deserialize, Serialize};

use crate::model::{NatClass, PeerId, RegionId, VideoId};
use crate::time::{SimDuration, SimTime};
use crate::tracker::HeartbeatReport;
use crate::transport::{serve_request, DataRequest, ServeOutcome};

pub use journal::{
    ingest_video, rollback, ChunkFetcher, EvictionJournal, Ingest, IngestReport, JournalChunk, JournalPhase, JournalVictim,
    OriginFetcher, Recovery, StoreSnapshot,
};
pub use store::{choose_victims, content_checksum, ChunkStore, ReplacementClass, StorePolicy, StoredChunk, StoredVideo, VideoUsage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerProfile {
    pub peer_id: PeerId,
    pub region: RegionId,
    pub vendor: u32,
    pub nat: NatClass,
    pub uplink_bps: u64,
}

#[derive(Debug, Clone)]
pub struct PeerServer {
    pub profile: PeerProfile,
    pub store: ChunkStore,
    pub online: bool,
    heartbeat_interval: SimDuration,
    next_beat: SimTime,
    removed: Vec<VideoId>,
    /// Uplink busy time accumulated since the last heartbeat.
    busy: SimDuration,
    last_beat: SimTime,
}

impl PeerServer {
    pub fn new(profile: PeerProfile, store: ChunkStore, heartbeat_interval: SimDuration, first_beat: SimTime) -> Self {
        Self {
            profile,
            store,
            online: true,
            heartbeat_interval,
            next_beat: first_beat,
            removed: Vec::new(),
            busy: SimDuration::ZERO,
            last_beat: first_beat,
        }
    }

    /// Answers a data request from the store. Every request marks its video
    /// as in transmission. An offline peer answers nothing.
    pub fn serve(&mut self, request: &DataRequest, now: SimTime) -> Vec<ServeOutcome> {
        if !self.online {
            return Vec::new();
        }
        self.store.touch(request.video_id, now);
        serve_request(&mut self.store, request, now)
    }

    /// Records uplink occupancy for the bandwidth utilization report.
    pub fn add_busy(&mut self, d: SimDuration) {
        self.busy += d;
    }

    /// Notes a video that left the store, reported on the next beat.
    pub fn note_removed(&mut self, v: VideoId) {
        if !self.removed.contains(&v) {
            self.removed.push(v);
        }
    }

    /// Region moves are reported on the next heartbeat.
    pub fn change_region(&mut self, region: RegionId) {
        self.profile.region = region;
    }

    pub fn next_heartbeat(&self) -> SimTime {
        self.next_beat
    }

    /// The report a peer sends when joining: current disk state, no load.
    pub fn announce(&self) -> HeartbeatReport {
        self.report(0.0, Vec::new())
    }

    /// Builds the heartbeat due at `now` and schedules the next one.
    pub fn emit_heartbeat(&mut self, now: SimTime) -> HeartbeatReport {
        let span = now.since(self.last_beat).as_secs_f64();
        let bw = if span > 0.0 { (self.busy.as_secs_f64() / span).min(1.0) } else { 0.0 };
        self.busy = SimDuration::ZERO;
        self.last_beat = now;
        self.next_beat = now + self.heartbeat_interval;
        let removed = std::mem::take(&mut self.removed);
        self.report(bw, removed)
    }

    fn report(&self, bw: f64, removed: Vec<VideoId>) -> HeartbeatReport {
        let disk = if self.store.capacity > 0 { self.store.used() as f64 / self.store.capacity as f64 } else { 1.0 };
        HeartbeatReport {
            peer_id: self.profile.peer_id,
            region: self.profile.region,
            vendor: self.profile.vendor,
            nat: self.profile.nat,
            bandwidth_utilization: bw,
            disk_utilization: disk,
            // serving is the dominant load on these boxes
            cpu_utilization: (0.05 + 0.6 * bw).min(1.0),
            uplink_bps: self.profile.uplink_bps,
            disk_free: self.store.free(),
            removed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContentSource, PacketLayout};
    use crate::transport::{PathId, Unavailable};
    use bytes::Bytes;

    const MB: u64 = 1_000_000;

    fn store(capacity: u64) -> ChunkStore {
        ChunkStore::new(capacity, 100_000, 1000)
    }

    #[test]
    fn idle_cold_video_goes_before_busy_hot_one() {
        let mut s = store(10 * MB);
        s.place_video(VideoId(1), 5 * MB).unwrap();
        s.place_video(VideoId(2), 5 * MB).unwrap();
        let now = SimTime::from_secs_f64(100.0);
        for _ in 0..10 {
            s.touch(VideoId(2), now);
        }
        assert_eq!(choose_victims(&s, VideoId(9), 3 * MB, now).unwrap(), vec![VideoId(1)]);
    }

    #[test]
    fn similar_size_first_then_accumulate() {
        let mut s = store(390 * MB);
        s.place_video(VideoId(1), 90 * MB).unwrap();
        s.place_video(VideoId(2), 300 * MB).unwrap();
        let got = choose_victims(&s, VideoId(9), 100 * MB, SimTime::ZERO).unwrap();
        assert_eq!(got, vec![VideoId(1), VideoId(2)]);

        let mut s = store(405 * MB);
        s.place_video(VideoId(1), 90 * MB).unwrap();
        s.place_video(VideoId(2), 300 * MB).unwrap();
        s.place_video(VideoId(3), 15 * MB).unwrap();
        let got = choose_victims(&s, VideoId(9), 100 * MB, SimTime::ZERO).unwrap();
        assert_eq!(got, vec![VideoId(1), VideoId(3)]);
    }

    #[test]
    fn free_space_means_no_victims() {
        let s = store(10 * MB);
        assert!(choose_victims(&s, VideoId(1), 5 * MB, SimTime::ZERO).unwrap().is_empty());
    }

    #[test]
    fn protection_floor_refuses_to_gut_live_transfers() {
        let mut s = store(10 * MB);
        s.place_video(VideoId(1), 5 * MB).unwrap();
        s.place_video(VideoId(2), 5 * MB).unwrap();
        let now = SimTime::from_secs_f64(1.0);
        s.touch(VideoId(1), now);
        s.touch(VideoId(2), now);
        assert!(choose_victims(&s, VideoId(9), 5 * MB, now).is_ok());
        assert!(choose_victims(&s, VideoId(9), 6 * MB, now).is_err());
    }

    fn request(video: u32, seqs: Vec<u64>) -> DataRequest {
        DataRequest { video_id: VideoId(video), request_id: 0, path_id: PathId(0), packet_seqs: seqs, issued_at: SimTime::ZERO }
    }

    fn server(s: ChunkStore) -> PeerServer {
        let profile = PeerProfile { peer_id: PeerId(1), region: RegionId(0), vendor: 0, nat: NatClass::Open, uplink_bps: 10_000_000 };
        PeerServer::new(profile, s, SimDuration::from_secs(30), SimTime::ZERO)
    }

    #[test]
    fn served_packets_match_content_and_mark_transit() {
        let mut s = store(10 * MB);
        s.place_video(VideoId(3), 250_000).unwrap();
        let mut p = server(s);
        let now = SimTime::from_secs_f64(5.0);
        let out = p.serve(&request(3, vec![0, 99, 100, 249]), now);
        let layout = PacketLayout::new(250_000, 100_000, 1000);
        for o in out {
            let ServeOutcome::Packet(pkt) = o else { panic!("unexpected reject") };
            let r = layout.byte_range(pkt.packet_seq);
            let (chunk, off) = layout.locate(pkt.packet_seq);
            assert_eq!(pkt.payload, ContentSource::slice(VideoId(3), chunk as u32, off..off + (r.end - r.start)));
        }
        assert!(p.store.in_transmission(VideoId(3), now));
        assert!(!p.store.in_transmission(VideoId(3), now + SimDuration::from_secs(3)));
    }

    #[test]
    fn unknown_video_is_all_rejects() {
        let mut p = server(store(MB));
        let out = p.serve(&request(8, vec![0, 1]), SimTime::ZERO);
        assert!(out.iter().all(|o| matches!(o, ServeOutcome::Reject { reason: Unavailable::NotStored, .. })));
    }

    #[test]
    fn bit_flip_is_rejected_and_flagged() {
        let mut s = store(MB);
        s.place_video(VideoId(1), 200_000).unwrap();
        s.inject_corruption(VideoId(1), 1, 12345);
        let mut p = server(s);
        let out = p.serve(&request(1, vec![0, 100]), SimTime::ZERO);
        assert!(matches!(out[0], ServeOutcome::Packet(_)));
        assert!(matches!(out[1], ServeOutcome::Reject { reason: Unavailable::Corrupt, .. }));
        assert_eq!(p.store.take_corrupt(), vec![(VideoId(1), 1)]);
        p.store.repair_chunk(VideoId(1), 1);
        assert!(matches!(p.serve(&request(1, vec![100]), SimTime::ZERO)[0], ServeOutcome::Packet(_)));
    }

    #[test]
    fn heartbeat_every_interval_with_region_delta() {
        let mut p = server(store(MB));
        let mut t = SimTime::ZERO;
        let mut beats = Vec::new();
        for _ in 0..4 {
            t = p.next_heartbeat();
            beats.push(p.emit_heartbeat(t));
        }
        assert_eq!(t, SimTime::from_secs_f64(90.0));
        p.change_region(RegionId(7));
        let next = p.next_heartbeat();
        assert_eq!(next.since(t), SimDuration::from_secs(30));
        assert_eq!(p.emit_heartbeat(next).region, RegionId(7));
        assert!(beats.iter().all(|b| b.region == RegionId(0)));
    }

    struct Flaky {
        fail_from: u32,
    }

    impl ChunkFetcher for Flaky {
        fn fetch(&mut self, video: VideoId, seq: u32, size: u64) -> Option<Bytes> {
            (seq < self.fail_from).then(|| ContentSource::chunk_payload(video, seq, size))
        }
    }

    #[test]
    fn source_losing_the_video_midway_falls_back_to_origin() {
        let mut s = store(MB);
        let r = ingest_video(&mut s, 1, VideoId(4), 450_000, &mut Flaky { fail_from: 2 }, Some(&mut OriginFetcher), SimTime::ZERO)
            .unwrap();
        assert_eq!((r.from_primary, r.from_fallback), (2, 3));
        assert!(s.holds_video(VideoId(4)));
        s.verify_all().unwrap();
    }

    #[test]
    fn failed_fetch_rolls_back() {
        let mut s = store(500_000);
        s.place_video(VideoId(1), 400_000).unwrap();
        let before = s.resident_set();
        let err = ingest_video(&mut s, 1, VideoId(2), 300_000, &mut Flaky { fail_from: 1 }, None, SimTime::ZERO);
        assert!(err.is_err());
        assert_eq!(s.resident_set(), before);
    }
}
