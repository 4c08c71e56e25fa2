mod common;

use pcdn_core::model::VideoId;
use pcdn_core::peer::{ingest_video, ChunkFetcher, OriginFetcher, StoreSnapshot};
use pcdn_core::peer::ChunkStore;
use pcdn_core::SimTime;
use proptest::prelude::*;

#[test]
fn every_crash_point_recovers_to_pre_or_post() {
    for case in common::crash_cases() {
        let points = common::crash_sweep(&case).unwrap_or_else(|e| panic!("{case:?}: {e}"));
        assert!(points >= 4);
    }
}

struct Flaky(u32);

impl ChunkFetcher for Flaky {
    fn fetch(&mut self, video: VideoId, seq: u32, size: u64) -> Option<bytes::Bytes> {
        (seq != self.0).then(|| pcdn_core::model::ContentSource::chunk_payload(video, seq, size))
    }
}

#[test]
fn missing_chunk_without_fallback_rolls_back() {
    let mut store = ChunkStore::new(4_000_000, 1_000_000, 1200);
    store.place_video(VideoId(1), 3_000_000).unwrap();
    let before = store.resident_set();
    let err = ingest_video(&mut store, 1, VideoId(2), 2_000_000, &mut Flaky(1), None, SimTime::ZERO);
    assert!(err.is_err());
    assert_eq!(store.resident_set(), before);
    store.verify_all().unwrap();
}

#[test]
fn fallback_fills_rejected_chunks() {
    let mut store = ChunkStore::new(4_000_000, 1_000_000, 1200);
    let r = ingest_video(&mut store, 1, VideoId(2), 2_500_000, &mut Flaky(1), Some(&mut OriginFetcher), SimTime::ZERO).unwrap();
    assert_eq!((r.from_primary, r.from_fallback), (2, 1));
    assert!(store.holds_video(VideoId(2)));
    store.verify_all().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_stores_recover(
        residents in prop::collection::vec((1u64..3_000_000, 0u32..1000), 1..6),
        incoming in 500_000u64..6_000_000,
    ) {
        let case = common::CrashCase {
            capacity: 8_000_000,
            chunk: 1_000_000,
            residents: residents.iter().enumerate().map(|(i, &(s, t))| (i as u32 + 1, s, t as f64)).collect(),
            incoming: (99, incoming),
        };
        // drop residents that would not fit in the first place
        let mut used = 0;
        let case = common::CrashCase {
            residents: case.residents.into_iter().filter(|r| { used += r.1; used <= case.capacity }).collect(),
            ..case
        };
        // recently served videos are protected, so some ingests are refused up front
        prop_assume!(common::plannable(&case));
        if let Err(e) = common::crash_sweep(&case) {
            return Err(TestCaseError::fail(format!("{case:?}: {e}")));
        }
    }
}

#[test]
fn snapshot_round_trips() {
    let mut store = ChunkStore::new(4_000_000, 1_000_000, 1200);
    store.place_video(VideoId(3), 1_700_000).unwrap();
    let snap = StoreSnapshot { store, journal: None };
    let back = StoreSnapshot::from_json(&snap.to_json().unwrap()).unwrap();
    assert_eq!(back.store.resident_set(), snap.store.resident_set());
}
