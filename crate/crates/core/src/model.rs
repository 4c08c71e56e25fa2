//! Content identity and the segment / chunk / packet arithmetic shared by
//! every other module.
//!
//! A video is cut two ways. Segments slice it by play duration and are the
//! unit of prefetching and of CDN/PCDN network marking. Chunks slice it by
//! bytes and are the unit of peer storage and integrity checking. Packets
//! tile each chunk and are the unit the transport requests.

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Default segment play duration, in seconds.
pub const DEFAULT_SEGMENT_SECS: f64 = 10.0;
/// Default chunk size: 2 MiB.
pub const DEFAULT_CHUNK_SIZE: u64 = 2 * 1024 * 1024;
/// Default packet payload, sized to leave datagram headroom under a 1500 B MTU.
pub const DEFAULT_PAYLOAD_SIZE: u32 = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VideoId(pub u32);

/// Identifies a peer server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// A network region. Peers and clients in the same region are close.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(pub u32);

/// NAT behaviour class of a host, from most to least permissive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NatClass {
    Open,
    FullCone,
    Restricted,
    PortRestricted,
    Symmetric,
}

impl NatClass {
    pub const ALL: [NatClass; 5] =
        [NatClass::Open, NatClass::FullCone, NatClass::Restricted, NatClass::PortRestricted, NatClass::Symmetric];

    /// Whether hole punching between the two classes can succeed. A
    /// symmetric NAT cannot be punched from a port-restricted or symmetric
    /// one.
    pub fn compatible(self, other: NatClass) -> bool {
        use NatClass::*;
        !matches!((self, other), (Symmetric, Symmetric) | (Symmetric, PortRestricted) | (PortRestricted, Symmetric))
    }
}

/// Which network a segment was (or will be) downloaded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Cdn,
    Pcdn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCatalogEntry {
    pub video_id: VideoId,
    /// Play duration in seconds.
    pub duration: f64,
    /// Encoding bitrate in bits per second.
    pub bitrate: u64,
    /// Size in bytes, `duration * bitrate / 8` rounded to the nearest byte.
    pub size: u64,
}

impl VideoCatalogEntry {
    pub fn new(video_id: VideoId, duration: f64, bitrate: u64) -> Result<Self> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::invalid("catalog.duration", format!("{duration} is not a finite non-negative duration")));
        }
        let size = (duration * bitrate as f64 / 8.0).round() as u64;
        Ok(Self { video_id, duration, bitrate, size })
    }

    pub fn bytes_per_sec(&self) -> f64 {
        self.bitrate as f64 / 8.0
    }

    /// Byte offset corresponding to a play position, clamped to the video.
    pub fn byte_at(&self, secs: f64) -> u64 {
        if self.duration <= 0.0 {
            return 0;
        }
        let frac = (secs / self.duration).clamp(0.0, 1.0);
        ((self.size as f64) * frac).round() as u64
    }

    /// Play position reached once the first `bytes` bytes are available.
    pub fn secs_at(&self, bytes: u64) -> f64 {
        if self.size == 0 {
            return self.duration;
        }
        self.duration * (bytes.min(self.size) as f64 / self.size as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub video_id: VideoId,
    pub index: u32,
    /// Play time at which the segment starts, in seconds.
    pub start: f64,
    pub play_duration: f64,
    pub byte_range: Range<u64>,
    /// Set once when the segment's download starts.
    pub network_mark: Option<Network>,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.play_duration
    }

    pub fn len_bytes(&self) -> u64 {
        self.byte_range.end - self.byte_range.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub video_id: VideoId,
    pub seq: u32,
    pub size: u64,
    pub checksum: u64,
}

/// One datagram-sized slice of a chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub video_id: VideoId,
    pub packet_seq: u64,
    pub payload: Bytes,
}

impl Packet {
    pub fn payload_size(&self) -> usize {
        self.payload.len()
    }
}

fn segment_count(duration: f64, segment_len: f64) -> u32 {
    if duration <= 0.0 {
        return 0;
    }
    // absorb float noise such as 30.000000000000004 / 10
    let ratio = duration / segment_len;
    let n = (ratio - 1e-9).ceil();
    n.max(1.0) as u32
}

/// Partitions a video into equal play-duration segments; the last one
/// carries the remainder. A `segment_len` at or above the duration yields a
/// single segment (full-video preload).
pub fn segment_video(entry: &VideoCatalogEntry, segment_len: f64) -> Vec<Segment> {
    assert!(segment_len > 0.0, "segment length must be positive");
    let count = segment_count(entry.duration, segment_len);
    (0..count)
        .map(|i| {
            let start = i as f64 * segment_len;
            let end = if i + 1 == count { entry.duration } else { (i + 1) as f64 * segment_len };
            let byte_start = entry.byte_at(start);
            let byte_end = if i + 1 == count { entry.size } else { entry.byte_at(end) };
            Segment {
                video_id: entry.video_id,
                index: i,
                start,
                play_duration: end - start,
                byte_range: byte_start..byte_end,
                network_mark: None,
            }
        })
        .collect()
}

/// Splits a video into fixed-size chunks, checksumming each over the
/// canonical content produced by [`ContentSource`].
pub fn chunk_video(entry: &VideoCatalogEntry, chunk_size: u64) -> Vec<Chunk> {
    assert!(chunk_size > 0, "chunk size must be positive");
    chunk_sizes(entry.size, chunk_size)
        .enumerate()
        .map(|(seq, size)| {
            let payload = ContentSource::chunk_payload(entry.video_id, seq as u32, size);
            Chunk { video_id: entry.video_id, seq: seq as u32, size, checksum: compute_checksum(&payload) }
        })
        .collect()
}

/// Sizes of the chunks tiling `total` bytes.
pub fn chunk_sizes(total: u64, chunk_size: u64) -> impl Iterator<Item = u64> {
    let count = total.div_ceil(chunk_size);
    (0..count).map(move |i| (total - i * chunk_size).min(chunk_size))
}

/// 64-bit xxHash of a payload. Guards against transfer and storage
/// corruption; not collision resistant against an adversary.
pub fn compute_checksum(payload: &[u8]) -> u64 {
    xxhash_rust::xxh64::xxh64(payload, 0)
}

/// Deterministic stand-in for the origin content of every video. Peers and
/// the CDN both materialize bytes from here, so a payload can always be
/// re-derived and checked.
pub struct ContentSource;

impl ContentSource {
    pub fn chunk_payload(video: VideoId, chunk_seq: u32, size: u64) -> Bytes {
        Self::slice(video, chunk_seq, 0..size)
    }

    /// Bytes `range` of a chunk, without materializing the rest of it.
    pub fn slice(video: VideoId, chunk_seq: u32, range: Range<u64>) -> Bytes {
        let seed = ((video.0 as u64) << 32 | chunk_seq as u64) ^ 0x9E37_79B9_7F4A_7C15;
        let mut buf = Vec::with_capacity((range.end - range.start) as usize);
        let mut pos = range.start;
        while pos < range.end {
            let word = pos / 8;
            let bytes = splitmix64_at(seed, word).to_le_bytes();
            let from = (pos % 8) as usize;
            let to = ((range.end - word * 8).min(8)) as usize;
            buf.extend_from_slice(&bytes[from..to]);
            pos = word * 8 + to as u64;
        }
        Bytes::from(buf)
    }
}

/// The `index`-th output of a SplitMix64 stream started at `seed`.
fn splitmix64_at(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps packet sequence numbers to chunk positions and byte ranges.
///
/// Packets never straddle a chunk boundary: each chunk holds
/// `ceil(chunk_size / payload)` packets and its last packet may be short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLayout {
    pub video_size: u64,
    pub chunk_size: u64,
    pub payload_size: u32,
}

impl PacketLayout {
    pub fn new(video_size: u64, chunk_size: u64, payload_size: u32) -> Self {
        assert!(chunk_size > 0 && payload_size > 0);
        Self { video_size, chunk_size, payload_size }
    }

    pub fn packets_per_chunk(&self) -> u64 {
        self.chunk_size.div_ceil(self.payload_size as u64)
    }

    pub fn chunk_count(&self) -> u64 {
        self.video_size.div_ceil(self.chunk_size)
    }

    fn chunk_len(&self, chunk: u64) -> u64 {
        (self.video_size - chunk * self.chunk_size).min(self.chunk_size)
    }

    pub fn packet_count(&self) -> u64 {
        if self.video_size == 0 {
            return 0;
        }
        let last = self.chunk_count() - 1;
        last * self.packets_per_chunk() + self.chunk_len(last).div_ceil(self.payload_size as u64)
    }

    /// `(chunk index, byte offset within chunk)` of a packet.
    pub fn locate(&self, seq: u64) -> (u64, u64) {
        let ppc = self.packets_per_chunk();
        (seq / ppc, (seq % ppc) * self.payload_size as u64)
    }

    /// Byte range of a packet within the video.
    pub fn byte_range(&self, seq: u64) -> Range<u64> {
        let (chunk, offset) = self.locate(seq);
        let start = chunk * self.chunk_size + offset;
        let chunk_end = chunk * self.chunk_size + self.chunk_len(chunk);
        start..(start + self.payload_size as u64).min(chunk_end)
    }

    pub fn packet_len(&self, seq: u64) -> u64 {
        let r = self.byte_range(seq);
        r.end - r.start
    }

    /// First packet whose start byte is at or after `byte`.
    pub fn first_seq_at_or_after(&self, byte: u64) -> u64 {
        if byte >= self.video_size {
            return self.packet_count();
        }
        let chunk = byte / self.chunk_size;
        let within = byte % self.chunk_size;
        let idx = within.div_ceil(self.payload_size as u64);
        let in_chunk = self.chunk_len(chunk).div_ceil(self.payload_size as u64);
        if idx >= in_chunk {
            (chunk + 1) * self.packets_per_chunk()
        } else {
            chunk * self.packets_per_chunk() + idx
        }
        .min(self.packet_count())
    }

    /// Packets owned by a byte range: those whose first byte falls inside
    /// it. Adjacent ranges therefore own disjoint packet ranges.
    pub fn packets_for(&self, bytes: &Range<u64>) -> Range<u64> {
        self.first_seq_at_or_after(bytes.start)..self.first_seq_at_or_after(bytes.end)
    }

    /// Total bytes carried by a packet range.
    pub fn bytes_in(&self, seqs: &Range<u64>) -> u64 {
        if seqs.is_empty() {
            return 0;
        }
        self.byte_range(seqs.end - 1).end - self.byte_range(seqs.start).start
    }
}

/// The set of videos a scenario serves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: Vec<VideoCatalogEntry>,
}

impl Catalog {
    /// Writes the entries back in the format [`Catalog::parse_csv`] reads.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["video_id", "duration_s", "bitrate_bps"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([e.video_id.0.to_string(), e.duration.to_string(), e.bitrate.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Parses `video_id,duration_s,bitrate_bps` records, one per line.
    /// Blank lines, `#` comments and a header line starting with
    /// `video_id` are ignored.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::invalid("catalog", e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.get(0) == Some("video_id") {
                continue;
            }
            let field = format!("catalog line {line}");
            if record.len() != 3 {
                return Err(Error::invalid(field, "expected video_id,duration_s,bitrate_bps"));
            }
            let id: u32 = record[0].parse().map_err(|_| Error::invalid(&field, "bad video_id"))?;
            let duration: f64 = record[1].parse().map_err(|_| Error::invalid(&field, "bad duration_s"))?;
            let bitrate: u64 = record[2].parse().map_err(|_| Error::invalid(&field, "bad bitrate_bps"))?;
            entries.push(VideoCatalogEntry::new(VideoId(id), duration, bitrate)?);
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.video_id) {
                return Err(Error::invalid("catalog", format!("duplicate video_id {}", e.video_id.0)));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: VideoId) -> Option<&VideoCatalogEntry> {
        self.entries.get(id.0 as usize).filter(|e| e.video_id == id).or_else(|| self.entries.iter().find(|e| e.video_id == id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_agree_with_whole_chunk() {
        let whole = ContentSource::chunk_payload(VideoId(4), 2, 1000);
        for (a, b) in [(0, 0), (0, 1000), (3, 11), (8, 16), (997, 1000), (5, 6)] {
            assert_eq!(ContentSource::slice(VideoId(4), 2, a..b), whole.slice(a as usize..b as usize));
        }
    }

    #[test]
    fn nat_compatibility_is_symmetric() {
        for a in NatClass::ALL {
            for b in NatClass::ALL {
                assert_eq!(a.compatible(b), b.compatible(a));
            }
        }
        assert!(!NatClass::Symmetric.compatible(NatClass::Symmetric));
        assert!(NatClass::Open.compatible(NatClass::Symmetric));
    }

    const MB: u64 = 1024 * 1024;

    fn entry(duration: f64, bitrate: u64) -> VideoCatalogEntry {
        VideoCatalogEntry::new(VideoId(1), duration, bitrate).unwrap()
    }

    #[test]
    fn twenty_five_second_video_gives_ten_ten_five() {
        let segs = segment_video(&entry(25.0, 1_000_000), 10.0);
        let durations: Vec<f64> = segs.iter().map(|s| s.play_duration).collect();
        assert_eq!(durations, vec![10.0, 10.0, 5.0]);
    }

    #[test]
    fn zero_duration_has_no_segments() {
        assert!(segment_video(&entry(0.0, 1_000_000), 10.0).is_empty());
    }

    #[test]
    fn thirty_seconds_is_three_equal_segments() {
        let segs = segment_video(&entry(30.0, 2_000_000), DEFAULT_SEGMENT_SECS);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.play_duration == 10.0));
        assert_eq!(segs[2].byte_range.end, 7_500_000);
    }

    #[test]
    fn chunking_carries_remainder() {
        let e = VideoCatalogEntry { video_id: VideoId(3), duration: 1.0, bitrate: 0, size: 5 * MB };
        let sizes: Vec<u64> = chunk_video(&e, 2 * MB).iter().map(|c| c.size).collect();
        assert_eq!(sizes, vec![2 * MB, 2 * MB, MB]);
        let e = VideoCatalogEntry { size: 2 * MB, ..e };
        assert_eq!(chunk_video(&e, 2 * MB).len(), 1);
    }

    #[test]
    fn ten_second_segment_at_four_mbps_is_three_chunks() {
        // 10 s * 4e6 b/s / 8 = 5e6 bytes, which needs 3 chunks of 2 MiB.
        let e = entry(10.0, 4_000_000);
        assert_eq!(e.size, 5_000_000);
        assert_eq!(chunk_video(&e, DEFAULT_CHUNK_SIZE).len(), 3);
    }

    #[test]
    fn checksum_is_deterministic_and_catches_every_single_bit_flip() {
        let payload: Vec<u8> = (0..64u8).map(|b| b.wrapping_mul(37).wrapping_add(11)).collect();
        let base = compute_checksum(&payload);
        assert_eq!(base, compute_checksum(&payload.clone()));
        for byte in 0..payload.len() {
            for bit in 0..8 {
                let mut flipped = payload.clone();
                flipped[byte] ^= 1 << bit;
                assert_ne!(compute_checksum(&flipped), base, "flip at byte {byte} bit {bit}");
            }
        }
    }

    #[test]
    fn empty_payload_digest_is_xxh64_fixed_point() {
        assert_eq!(compute_checksum(&[]), 0xEF46_DB37_51D8_E999);
    }

    #[test]
    fn layout_handles_short_chunk_tail() {
        let layout = PacketLayout::new(5000, 2048, 1000);
        assert_eq!(layout.packets_per_chunk(), 3);
        assert_eq!(layout.packet_count(), 3 + 3 + 1);
        assert_eq!(layout.byte_range(2), 2000..2048);
        assert_eq!(layout.byte_range(6), 4096..5000);
        assert_eq!(layout.first_seq_at_or_after(2001), 3);
        assert_eq!(layout.first_seq_at_or_after(5000), 7);
    }

    #[test]
    fn catalog_csv_parses_and_rejects_duplicates() {
        let text = "video_id,duration_s,bitrate_bps\n# comment\n0, 30, 2000000\n1,12.5,800000\n";
        let cat = Catalog::parse_csv(text).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.get(VideoId(1)).unwrap().size, 1_250_000);
        assert!(Catalog::parse_csv("0,1,1\n0,2,2\n").is_err());
        assert!(Catalog::parse_csv("0,1\n").is_err());
        assert_eq!(Catalog::parse_csv(&cat.to_csv()).unwrap(), cat);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segments_and_chunks_tile_the_video(dur in 0.0f64..400.0, kbps in 100u64..20_000, seg in 1.0f64..30.0, chunk_kb in 1u64..4096) {
                let e = entry(dur, kbps * 1000);
                let segs = segment_video(&e, seg);
                let total: f64 = segs.iter().map(|s| s.play_duration).sum();
                prop_assert!((total - e.duration).abs() < 1e-6);
                let mut cursor = 0;
                for s in &segs {
                    prop_assert_eq!(s.byte_range.start, cursor);
                    cursor = s.byte_range.end;
                }
                prop_assert_eq!(cursor, e.size);
                let chunk = chunk_kb * 1024;
                let sum: u64 = chunk_sizes(e.size, chunk).sum();
                prop_assert_eq!(sum, e.size);
                prop_assert_eq!(chunk_sizes(e.size, chunk).count() as u64, e.size.div_ceil(chunk));
            }

            #[test]
            fn packet_mapping_is_a_bijection(size in 0u64..200_000, chunk in 1u64..20_000, payload in 1u32..3_000) {
                let layout = PacketLayout::new(size, chunk, payload);
                let mut cursor = 0;
                for seq in 0..layout.packet_count() {
                    let r = layout.byte_range(seq);
                    prop_assert_eq!(r.start, cursor);
                    prop_assert!(r.end > r.start);
                    prop_assert_eq!(layout.first_seq_at_or_after(r.start), seq);
                    let (c, off) = layout.locate(seq);
                    prop_assert_eq!(c * chunk + off, r.start);
                    cursor = r.end;
                }
                prop_assert_eq!(cursor, size);
            }
        }
    }
}
