use std::collections::{BTreeMap, BTreeSet};

use crate::model::{PeerId, VideoId};

/// Video to peer map with its reverse. Both sides change together.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrackerIndex {
    by_video: BTreeMap<VideoId, BTreeSet<PeerId>>,
    by_peer: BTreeMap<PeerId, BTreeSet<VideoId>>,
}

impl TrackerIndex {
    /// Returns false if the pair was already present.
    pub fn insert(&mut self, video: VideoId, peer: PeerId) -> bool {
        let fresh = self.by_video.entry(video).or_default().insert(peer);
        self.by_peer.entry(peer).or_default().insert(video);
        fresh
    }

    pub fn remove(&mut self, video: VideoId, peer: PeerId) -> bool {
        let had = self.by_video.get_mut(&video).is_some_and(|s| s.remove(&peer));
        if self.by_video.get(&video).is_some_and(BTreeSet::is_empty) {
            self.by_video.remove(&video);
        }
        if let Some(s) = self.by_peer.get_mut(&peer) {
            s.remove(&video);
            if s.is_empty() {
                self.by_peer.remove(&peer);
            }
        }
        had
    }

    /// Drops every entry of a peer. Returns the videos it held.
    pub fn remove_peer(&mut self, peer: PeerId) -> BTreeSet<VideoId> {
        let videos = self.by_peer.remove(&peer).unwrap_or_default();
        for v in &videos {
            if let Some(s) = self.by_video.get_mut(v) {
                s.remove(&peer);
                if s.is_empty() {
                    self.by_video.remove(v);
                }
            }
        }
        videos
    }

    pub fn peers_for(&self, video: VideoId) -> impl Iterator<Item = PeerId> + '_ {
        self.by_video.get(&video).into_iter().flatten().copied()
    }

    pub fn videos_of(&self, peer: PeerId) -> impl Iterator<Item = VideoId> + '_ {
        self.by_peer.get(&peer).into_iter().flatten().copied()
    }

    pub fn holds(&self, video: VideoId, peer: PeerId) -> bool {
        self.by_video.get(&video).is_some_and(|s| s.contains(&peer))
    }

    pub fn copies(&self, video: VideoId) -> usize {
        self.by_video.get(&video).map_or(0, BTreeSet::len)
    }

    pub fn len(&self) -> usize {
        self.by_video.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_video.is_empty()
    }

    /// Full scan: every forward pair has its reverse and vice versa, and no
    /// empty sets linger.
    pub fn check_consistent(&self) -> Result<(), String> {
        for (v, peers) in &self.by_video {
            if peers.is_empty() {
                return Err(format!("{v} has an empty peer set"));
            }
            for p in peers {
                if !self.by_peer.get(p).is_some_and(|s| s.contains(v)) {
                    return Err(format!("{v} -> {p} has no reverse entry"));
                }
            }
        }
        for (p, videos) in &self.by_peer {
            if videos.is_empty() {
                return Err(format!("{p} has an empty video set"));
            }
            for v in videos {
                if !self.by_video.get(v).is_some_and(|s| s.contains(p)) {
                    return Err(format!("{p} -> {v} has no forward entry"));
                }
            }
        }
        Ok(())
    }
}
