use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{chunk_sizes, compute_checksum, ContentSource, PacketLayout, VideoId};
use crate::time::{SimDuration, SimTime};
use crate::transport::{PacketSource, Unavailable};

/// Checksum of a pristine chunk. Content is a pure function of its
/// coordinates, so the digest is memoized process-wide.
pub fn content_checksum(video: VideoId, seq: u32, size: u64) -> u64 {
    static MEMO: OnceLock<Mutex<HashMap<(u32, u32, u64), u64>>> = OnceLock::new();
    let memo = MEMO.get_or_init(Default::default);
    if let Some(&c) = memo.lock().unwrap().get(&(video.0, seq, size)) {
        return c;
    }
    let c = compute_checksum(&ContentSource::chunk_payload(video, seq, size));
    memo.lock().unwrap().insert((video.0, seq, size), c);
    c
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredChunk {
    pub seq: u32,
    pub size: u64,
    pub checksum: u64,
    /// Bit flipped by fault injection, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipped_bit: Option<u64>,
    #[serde(skip)]
    verified: bool,
}

impl StoredChunk {
    pub fn new(seq: u32, size: u64, checksum: u64) -> Self {
        Self { seq, size, checksum, flipped_bit: None, verified: false }
    }

    fn payload(&self, video: VideoId) -> Bytes {
        let pristine = ContentSource::chunk_payload(video, self.seq, self.size);
        match self.flipped_bit {
            None => pristine,
            Some(bit) => {
                let mut v = pristine.to_vec();
                v[(bit / 8) as usize] ^= 1 << (bit % 8);
                Bytes::from(v)
            }
        }
    }

    /// Stored bytes in `range` of the chunk, without building the rest.
    fn read(&self, video: VideoId, range: std::ops::Range<u64>) -> Bytes {
        let pristine = ContentSource::slice(video, self.seq, range.clone());
        match self.flipped_bit {
            Some(bit) if range.contains(&(bit / 8)) => {
                let mut v = pristine.to_vec();
                v[(bit / 8 - range.start) as usize] ^= 1 << (bit % 8);
                Bytes::from(v)
            }
            _ => pristine,
        }
    }

    /// Recomputes the digest of what is actually stored.
    fn stored_digest(&self, video: VideoId) -> u64 {
        match self.flipped_bit {
            None => content_checksum(video, self.seq, self.size),
            Some(_) => compute_checksum(&self.payload(video)),
        }
    }
}

/// Runtime usage of a stored video, feeding the replacement score.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VideoUsage {
    pub last_request: Option<SimTime>,
    /// Requests per distribution cycle, most recent first.
    pub accesses: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredVideo {
    pub video_id: VideoId,
    pub size: u64,
    pub chunks: BTreeMap<u32, StoredChunk>,
    #[serde(skip)]
    pub usage: VideoUsage,
}

impl StoredVideo {
    pub fn resident_bytes(&self) -> u64 {
        self.chunks.values().map(|c| c.size).sum()
    }
}

/// Replacement ordering key of a video. Smaller keys are evicted first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ReplacementClass {
    pub in_transmission: bool,
    pub frequency: u64,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorePolicy {
    /// A video requested within this long counts as in transmission.
    pub transit_grace: SimDuration,
    /// A video served within this long counts as cached in memory.
    pub cache_window: SimDuration,
    /// Largest fraction of in-transmission bytes that may be evicted.
    pub protection_floor: f64,
}

impl Default for StorePolicy {
    fn default() -> Self {
        Self {
            transit_grace: SimDuration::from_secs(2),
            cache_window: SimDuration::from_secs(60),
            protection_floor: 0.5,
        }
    }
}

/// Chunk store of one peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkStore {
    pub capacity: u64,
    pub chunk_size: u64,
    pub payload_size: u32,
    videos: BTreeMap<VideoId, StoredVideo>,
    #[serde(skip)]
    policy: StorePolicy,
    #[serde(skip)]
    corrupt_found: BTreeSet<(VideoId, u32)>,
    #[serde(skip)]
    pub packets_served: u64,
    #[serde(skip)]
    pub checksum_failures: u64,
}

impl ChunkStore {
    pub fn new(capacity: u64, chunk_size: u64, payload_size: u32) -> Self {
        Self {
            capacity,
            chunk_size,
            payload_size,
            videos: BTreeMap::new(),
            policy: StorePolicy::default(),
            corrupt_found: BTreeSet::new(),
            packets_served: 0,
            checksum_failures: 0,
        }
    }

    pub fn with_policy(mut self, policy: StorePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> StorePolicy {
        self.policy
    }

    pub fn used(&self) -> u64 {
        self.videos.values().map(StoredVideo::resident_bytes).sum()
    }

    pub fn free(&self) -> u64 {
        self.capacity.saturating_sub(self.used())
    }

    pub fn videos(&self) -> impl Iterator<Item = &StoredVideo> {
        self.videos.values()
    }

    pub fn video(&self, v: VideoId) -> Option<&StoredVideo> {
        self.videos.get(&v)
    }

    pub fn layout(&self, size: u64) -> PacketLayout {
        PacketLayout::new(size, self.chunk_size, self.payload_size)
    }

    /// True when every chunk of the video is resident.
    pub fn holds_video(&self, v: VideoId) -> bool {
        self.videos
            .get(&v)
            .is_some_and(|sv| sv.chunks.len() as u64 == self.layout(sv.size).chunk_count())
    }

    pub fn holds_chunk(&self, v: VideoId, seq: u32) -> bool {
        self.videos.get(&v).is_some_and(|sv| sv.chunks.contains_key(&seq))
    }

    /// Stores a whole pristine video, outside any journal. Used for
    /// initial placement.
    pub fn place_video(&mut self, v: VideoId, size: u64) -> Result<()> {
        if size > self.free() {
            return Err(Error::StoreFull { video: v.0, reason: format!("{size} bytes needed, {} free", self.free()) });
        }
        for (seq, csize) in chunk_sizes(size, self.chunk_size).enumerate() {
            let c = StoredChunk::new(seq as u32, csize, content_checksum(v, seq as u32, csize));
            self.insert_chunk(v, size, c)?;
        }
        Ok(())
    }

    pub(crate) fn insert_chunk(&mut self, v: VideoId, video_size: u64, chunk: StoredChunk) -> Result<()> {
        if self.holds_chunk(v, chunk.seq) {
            return Ok(());
        }
        if chunk.size > self.free() {
            return Err(Error::StoreFull { video: v.0, reason: "chunk does not fit".into() });
        }
        let entry = self.videos.entry(v).or_insert_with(|| StoredVideo {
            video_id: v,
            size: video_size,
            chunks: BTreeMap::new(),
            usage: VideoUsage::default(),
        });
        entry.chunks.insert(chunk.seq, chunk);
        Ok(())
    }

    pub(crate) fn remove_chunk(&mut self, v: VideoId, seq: u32) -> Option<StoredChunk> {
        let sv = self.videos.get_mut(&v)?;
        let c = sv.chunks.remove(&seq);
        if sv.chunks.is_empty() {
            self.videos.remove(&v);
        }
        c
    }

    /// Drops a whole video. Returns whether anything was removed.
    pub fn remove_video(&mut self, v: VideoId) -> bool {
        self.videos.remove(&v).is_some()
    }

    /// Flips one stored bit, as a disk fault would.
    pub fn inject_corruption(&mut self, v: VideoId, seq: u32, bit: u64) -> bool {
        match self.videos.get_mut(&v).and_then(|sv| sv.chunks.get_mut(&seq)) {
            Some(c) => {
                c.flipped_bit = Some(bit % (c.size * 8).max(1));
                c.verified = false;
                true
            }
            None => false,
        }
    }

    /// Rewrites a chunk from pristine content.
    pub fn repair_chunk(&mut self, v: VideoId, seq: u32) {
        if let Some(c) = self.videos.get_mut(&v).and_then(|sv| sv.chunks.get_mut(&seq)) {
            c.flipped_bit = None;
            c.verified = false;
        }
        self.corrupt_found.remove(&(v, seq));
    }

    /// Corrupt chunks discovered by reads since the last call.
    pub fn take_corrupt(&mut self) -> Vec<(VideoId, u32)> {
        std::mem::take(&mut self.corrupt_found).into_iter().collect()
    }

    /// Records a request for the replacement scorer.
    pub fn touch(&mut self, v: VideoId, now: SimTime) {
        if let Some(sv) = self.videos.get_mut(&v) {
            sv.usage.last_request = Some(now);
            sv.usage.accesses[0] += 1;
        }
    }

    /// Shifts the access-frequency window by one distribution cycle.
    pub fn roll_cycle(&mut self) {
        for sv in self.videos.values_mut() {
            sv.usage.accesses = [0, sv.usage.accesses[0], sv.usage.accesses[1]];
        }
    }

    pub fn in_transmission(&self, v: VideoId, now: SimTime) -> bool {
        self.videos
            .get(&v)
            .and_then(|sv| sv.usage.last_request)
            .is_some_and(|t| now.since(t) <= self.policy.transit_grace)
    }

    pub fn is_cached(&self, v: VideoId, now: SimTime) -> bool {
        self.videos
            .get(&v)
            .and_then(|sv| sv.usage.last_request)
            .is_some_and(|t| now.since(t) <= self.policy.cache_window)
    }

    pub fn class_of(&self, v: VideoId, now: SimTime) -> ReplacementClass {
        let freq = self.videos.get(&v).map_or(0, |sv| sv.usage.accesses.iter().sum());
        ReplacementClass { in_transmission: self.in_transmission(v, now), frequency: freq, cached: self.is_cached(v, now) }
    }

    /// Checks that a packet can be served: its chunk is resident and its
    /// stored digest matches. A mismatch flags the chunk for repair.
    pub fn check_packet(&mut self, v: VideoId, seq: u64) -> std::result::Result<(u32, u64), Unavailable> {
        let Some(sv) = self.videos.get_mut(&v) else { return Err(Unavailable::NotStored) };
        let layout = PacketLayout::new(sv.size, self.chunk_size, self.payload_size);
        if seq >= layout.packet_count() {
            return Err(Unavailable::NotStored);
        }
        let (chunk, offset) = layout.locate(seq);
        let Some(c) = sv.chunks.get_mut(&(chunk as u32)) else { return Err(Unavailable::NotStored) };
        if !c.verified {
            if c.stored_digest(v) != c.checksum {
                self.checksum_failures += 1;
                self.corrupt_found.insert((v, chunk as u32));
                return Err(Unavailable::Corrupt);
            }
            c.verified = true;
        }
        self.packets_served += 1;
        Ok((chunk as u32, offset))
    }

    /// Every resident chunk's stored bytes match its digest.
    pub fn verify_all(&self) -> std::result::Result<(), String> {
        for sv in self.videos.values() {
            for c in sv.chunks.values() {
                if c.stored_digest(sv.video_id) != c.checksum {
                    return Err(format!("{} chunk {} fails its checksum", sv.video_id, c.seq));
                }
            }
        }
        if self.used() > self.capacity {
            return Err(format!("{} bytes resident over capacity {}", self.used(), self.capacity));
        }
        Ok(())
    }

    /// Resident set as `(video, chunk, checksum)` triples.
    pub fn resident_set(&self) -> BTreeSet<(VideoId, u32, u64)> {
        self.videos
            .values()
            .flat_map(|sv| sv.chunks.values().map(move |c| (sv.video_id, c.seq, c.checksum)))
            .collect()
    }
}

impl PacketSource for ChunkStore {
    fn packet(&mut self, video: VideoId, seq: u64, now: SimTime) -> std::result::Result<Bytes, Unavailable> {
        let (chunk, offset) = self.check_packet(video, seq)?;
        self.touch(video, now);
        let sv = &self.videos[&video];
        let c = &sv.chunks[&chunk];
        let len = PacketLayout::new(sv.size, self.chunk_size, self.payload_size).packet_len(seq);
        Ok(c.read(video, offset..offset + len))
    }
}

/// Picks videos to evict so that `incoming` bytes fit.
///
/// Candidates are grouped by [`ReplacementClass`] and classes are drained in
/// ascending order. Within a class the candidate whose size is closest to
/// the bytes still needed goes first (larger on a tie), repeating until
/// enough is freed. At most `protection_floor` of the bytes currently in
/// transmission may be chosen; if that is not enough the incoming video is
/// refused.
pub fn choose_victims(store: &ChunkStore, incoming: VideoId, incoming_size: u64, now: SimTime) -> Result<Vec<VideoId>> {
    if incoming_size > store.capacity {
        return Err(Error::StoreFull { video: incoming.0, reason: "larger than the whole store".into() });
    }
    let free = store.free();
    if free >= incoming_size {
        return Ok(Vec::new());
    }
    let mut need = incoming_size - free;
    let mut by_class: BTreeMap<ReplacementClass, Vec<(VideoId, u64)>> = BTreeMap::new();
    let mut transit_bytes = 0u64;
    for sv in store.videos() {
        if sv.video_id == incoming {
            continue;
        }
        let class = store.class_of(sv.video_id, now);
        if class.in_transmission {
            transit_bytes += sv.resident_bytes();
        }
        by_class.entry(class).or_default().push((sv.video_id, sv.resident_bytes()));
    }
    let transit_budget = (transit_bytes as f64 * store.policy.protection_floor).floor() as u64;
    let mut transit_used = 0u64;
    let mut victims = Vec::new();
    for (class, mut members) in by_class {
        while need > 0 && !members.is_empty() {
            let pick = members
                .iter()
                .enumerate()
                .filter(|(_, (_, size))| !class.in_transmission || transit_used + size <= transit_budget)
                .min_by(|(_, a), (_, b)| a.1.abs_diff(need).cmp(&b.1.abs_diff(need)).then(b.1.cmp(&a.1)).then(a.0.cmp(&b.0)))
                .map(|(i, _)| i);
            let Some(i) = pick else { break };
            let (v, size) = members.swap_remove(i);
            if class.in_transmission {
                transit_used += size;
            }
            victims.push(v);
            need = need.saturating_sub(size);
        }
        if need == 0 {
            return Ok(victims);
        }
    }
    Err(Error::StoreFull {
        video: incoming.0,
        reason: format!("{need} more bytes needed beyond what may be evicted"),
    })
}
