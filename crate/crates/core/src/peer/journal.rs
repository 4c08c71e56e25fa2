//! Journaled ingest. Every mutation of the store during an ingest is
//! preceded by a journal record, so a restart can always return the store to
//! exactly its state before the operation, or finish a committed one.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{chunk_sizes, compute_checksum, ContentSource, VideoId};
use crate::time::SimTime;

use super::store::{choose_victims, content_checksum, ChunkStore, StoredChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalPhase {
    Planned,
    Evicting,
    Writing,
    Committed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalChunk {
    pub seq: u32,
    pub size: u64,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalVictim {
    pub video_id: VideoId,
    pub video_size: u64,
    pub chunks: Vec<JournalChunk>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionJournal {
    pub op_id: u64,
    pub video_id: VideoId,
    pub video_size: u64,
    pub phase: JournalPhase,
    pub victims: Vec<JournalVictim>,
    /// Chunks of the incoming video that were resident before the
    /// operation and must survive a rollback.
    pub preexisting: Vec<u32>,
    /// Victim chunks removed so far, as `(video, seq)`.
    pub evicted: Vec<(VideoId, u32)>,
    pub written: Vec<JournalChunk>,
}

/// What a restart found and did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recovery {
    Clean,
    RolledBack,
    RolledForward,
}

/// Persisted state of a peer's storage: the resident set plus any open
/// journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub store: ChunkStore,
    pub journal: Option<EvictionJournal>,
}

impl StoreSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Restores the store, resolving any interrupted operation.
    pub fn restore(self) -> Result<(ChunkStore, Recovery)> {
        let mut store = self.store;
        let outcome = match self.journal {
            None => Recovery::Clean,
            Some(j) if j.phase == JournalPhase::Committed => Recovery::RolledForward,
            Some(j) => {
                rollback(&mut store, &j)?;
                Recovery::RolledBack
            }
        };
        Ok((store, outcome))
    }
}

/// Undoes a partial ingest: drops incoming chunks that were not there
/// before, and re-materializes every victim chunk, checked against the
/// digest the journal recorded.
pub fn rollback(store: &mut ChunkStore, journal: &EvictionJournal) -> Result<()> {
    let incoming: Vec<u32> = store
        .video(journal.video_id)
        .map(|sv| sv.chunks.keys().copied().filter(|s| !journal.preexisting.contains(s)).collect())
        .unwrap_or_default();
    for seq in incoming {
        store.remove_chunk(journal.video_id, seq);
    }
    for victim in &journal.victims {
        for c in &victim.chunks {
            if store.holds_chunk(victim.video_id, c.seq) {
                continue;
            }
            let payload = ContentSource::chunk_payload(victim.video_id, c.seq, c.size);
            if compute_checksum(&payload) != c.checksum {
                return Err(Error::Wire(format!("{} chunk {} does not match its journal digest", victim.video_id, c.seq)));
            }
            store.insert_chunk(victim.video_id, victim.video_size, StoredChunk::new(c.seq, c.size, c.checksum))?;
        }
    }
    Ok(())
}

/// An ingest in progress. Drive it with [`Ingest::evict_step`] until it
/// returns false, then [`Ingest::write`] each chunk from
/// [`Ingest::next_chunk`], then [`Ingest::commit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest {
    journal: EvictionJournal,
    sizes: Vec<u64>,
}

impl Ingest {
    /// Chooses victims and opens the journal. Nothing is mutated yet.
    pub fn plan(store: &ChunkStore, op_id: u64, video: VideoId, size: u64, now: SimTime) -> Result<Self> {
        let sizes: Vec<u64> = chunk_sizes(size, store.chunk_size).collect();
        let preexisting: Vec<u32> = store.video(video).map(|sv| sv.chunks.keys().copied().collect()).unwrap_or_default();
        let already: u64 = preexisting.iter().map(|&s| sizes.get(s as usize).copied().unwrap_or(0)).sum();
        let victims = choose_victims(store, video, size - already, now)?;
        let victims = victims
            .into_iter()
            .map(|v| {
                let sv = store.video(v).expect("victim is resident");
                JournalVictim {
                    video_id: v,
                    video_size: sv.size,
                    chunks: sv.chunks.values().map(|c| JournalChunk { seq: c.seq, size: c.size, checksum: c.checksum }).collect(),
                }
            })
            .collect();
        Ok(Self {
            journal: EvictionJournal {
                op_id,
                video_id: video,
                video_size: size,
                phase: JournalPhase::Planned,
                victims,
                preexisting,
                evicted: Vec::new(),
                written: Vec::new(),
            },
            sizes,
        })
    }

    pub fn journal(&self) -> &EvictionJournal {
        &self.journal
    }

    pub fn video(&self) -> VideoId {
        self.journal.video_id
    }

    pub fn victims(&self) -> impl Iterator<Item = VideoId> + '_ {
        self.journal.victims.iter().map(|v| v.video_id)
    }

    /// Evicts one victim chunk. Returns false once nothing is left to
    /// evict.
    pub fn evict_step(&mut self, store: &mut ChunkStore) -> bool {
        let next = self
            .journal
            .victims
            .iter()
            .flat_map(|v| v.chunks.iter().map(move |c| (v.video_id, c.seq)))
            .find(|k| !self.journal.evicted.contains(k));
        match next {
            Some((v, seq)) => {
                self.journal.phase = JournalPhase::Evicting;
                store.remove_chunk(v, seq);
                self.journal.evicted.push((v, seq));
                true
            }
            None => {
                self.journal.phase = JournalPhase::Writing;
                false
            }
        }
    }

    /// Next chunk still to be written, as `(seq, size)`.
    pub fn next_chunk(&self) -> Option<(u32, u64)> {
        (0..self.sizes.len() as u32)
            .find(|s| !self.journal.preexisting.contains(s) && !self.journal.written.iter().any(|w| w.seq == *s))
            .map(|s| (s, self.sizes[s as usize]))
    }

    /// Stores one fetched chunk after checking it against the content
    /// digest.
    pub fn write(&mut self, store: &mut ChunkStore, seq: u32, payload: &Bytes) -> Result<()> {
        let size = payload.len() as u64;
        let checksum = compute_checksum(payload);
        if checksum != content_checksum(self.journal.video_id, seq, size) {
            return Err(Error::Wire(format!("fetched chunk {seq} of {} is corrupt", self.journal.video_id)));
        }
        self.write_verified(store, seq, size, checksum)
    }

    /// Stores a chunk whose integrity the caller has already established.
    pub fn write_verified(&mut self, store: &mut ChunkStore, seq: u32, size: u64, checksum: u64) -> Result<()> {
        self.journal.phase = JournalPhase::Writing;
        store.insert_chunk(self.journal.video_id, self.journal.video_size, StoredChunk::new(seq, size, checksum))?;
        self.journal.written.push(JournalChunk { seq, size, checksum });
        Ok(())
    }

    /// Marks the operation complete. The journal can then be discarded.
    pub fn commit(&mut self) -> Result<()> {
        if self.next_chunk().is_some() {
            return Err(Error::invalid("ingest", "commit before all chunks were written"));
        }
        self.journal.phase = JournalPhase::Committed;
        Ok(())
    }

    pub fn rollback(self, store: &mut ChunkStore) -> Result<()> {
        rollback(store, &self.journal)
    }
}

/// Fetches chunk payloads for an ingest.
pub trait ChunkFetcher {
    /// `None` when the source cannot supply the chunk.
    fn fetch(&mut self, video: VideoId, seq: u32, size: u64) -> Option<Bytes>;
}

/// The CDN always has everything.
#[derive(Debug, Default)]
pub struct OriginFetcher;

impl ChunkFetcher for OriginFetcher {
    fn fetch(&mut self, video: VideoId, seq: u32, size: u64) -> Option<Bytes> {
        Some(ContentSource::chunk_payload(video, seq, size))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub victims: usize,
    pub from_primary: u32,
    pub from_fallback: u32,
}

/// Runs a whole ingest synchronously. Each chunk comes from `primary`, or
/// from `fallback` when the primary rejects it. If neither can supply a
/// chunk the store is rolled back and the error returned.
pub fn ingest_video(
    store: &mut ChunkStore,
    op_id: u64,
    video: VideoId,
    size: u64,
    primary: &mut dyn ChunkFetcher,
    fallback: Option<&mut dyn ChunkFetcher>,
    now: SimTime,
) -> Result<IngestReport> {
    let mut op = Ingest::plan(store, op_id, video, size, now)?;
    let mut report = IngestReport { victims: op.journal.victims.len(), ..Default::default() };
    while op.evict_step(store) {}
    let mut fallback = fallback;
    while let Some((seq, csize)) = op.next_chunk() {
        let payload = match primary.fetch(video, seq, csize) {
            Some(p) => {
                report.from_primary += 1;
                Some(p)
            }
            None => fallback.as_deref_mut().and_then(|f| f.fetch(video, seq, csize)).inspect(|_| report.from_fallback += 1),
        };
        let written = match payload {
            Some(p) => op.write(store, seq, &p),
            None => Err(Error::Wire(format!("no source for chunk {seq} of {video}"))),
        };
        if let Err(e) = written {
            op.rollback(store)?;
            return Err(e);
        }
    }
    op.commit()?;
    Ok(report)
}
