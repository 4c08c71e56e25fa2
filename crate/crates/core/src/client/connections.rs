use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::PeerId;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerConnection {
    pub peer_id: PeerId,
    pub established_at: SimTime,
    pub last_used_at: SimTime,
    pub rtt: SimDuration,
    pub loss: f64,
    pub nat_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterLimits {
    pub rtt_max: SimDuration,
    pub loss_max: f64,
}

impl Default for FilterLimits {
    fn default() -> Self {
        Self { rtt_max: SimDuration::from_millis(500), loss_max: 0.10 }
    }
}

/// Drops probes over the RTT or loss limits and orders the rest by RTT.
pub fn filter_peers(candidates: Vec<PeerConnection>, limits: &FilterLimits) -> Vec<PeerConnection> {
    let mut kept: Vec<PeerConnection> =
        candidates.into_iter().filter(|c| c.nat_ok && c.rtt <= limits.rtt_max && c.loss <= limits.loss_max).collect();
    kept.sort_by(|a, b| a.rtt.cmp(&b.rtt).then(a.peer_id.cmp(&b.peer_id)));
    kept
}

/// Outcome of probing one peer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PunchResult {
    pub delay: SimDuration,
    pub rtt: SimDuration,
    pub loss: f64,
}

/// Answers peer lookups. `None` means the tracker could not be reached.
pub trait TrackerClient {
    fn locate(&mut self, video: crate::model::VideoId, m: usize) -> Option<Vec<PeerId>>;
}

/// Establishes a new connection. `None` means the punch failed.
pub trait Puncher {
    fn punch(&mut self, peer: PeerId) -> Option<PunchResult>;
}

/// Connections kept open after use so the next video can skip setup.
#[derive(Debug, Clone, Default)]
pub struct ConnectionPool {
    pub retention: SimDuration,
    conns: BTreeMap<PeerId, PeerConnection>,
}

impl ConnectionPool {
    pub fn new(retention: SimDuration) -> Self {
        Self { retention, conns: BTreeMap::new() }
    }

    pub fn reusable(&self, peer: PeerId, now: SimTime) -> Option<PeerConnection> {
        self.conns.get(&peer).copied().filter(|c| now.since(c.last_used_at) <= self.retention)
    }

    pub fn insert(&mut self, conn: PeerConnection) {
        self.conns.insert(conn.peer_id, conn);
    }

    pub fn touch(&mut self, peer: PeerId, now: SimTime) {
        if let Some(c) = self.conns.get_mut(&peer) {
            c.last_used_at = now;
        }
    }

    pub fn drop_peer(&mut self, peer: PeerId) {
        self.conns.remove(&peer);
    }

    pub fn expire(&mut self, now: SimTime) {
        let keep = self.retention;
        self.conns.retain(|_, c| now.since(c.last_used_at) <= keep);
    }

    pub fn len(&self) -> usize {
        self.conns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquired {
    pub connections: Vec<PeerConnection>,
    /// How long setup took: the slowest successful punch, zero when every
    /// connection was reused.
    pub setup_latency: SimDuration,
    pub reused: usize,
    pub punched: usize,
    pub failed: usize,
}

/// Looks up holders of `video`, reuses retained connections and punches
/// the rest, then filters the result.
pub fn acquire_connections(
    tracker: &mut dyn TrackerClient,
    puncher: &mut dyn Puncher,
    pool: &mut ConnectionPool,
    limits: &FilterLimits,
    video: crate::model::VideoId,
    m: usize,
    now: SimTime,
) -> Acquired {
    let mut out = Acquired { connections: Vec::new(), setup_latency: SimDuration::ZERO, reused: 0, punched: 0, failed: 0 };
    pool.expire(now);
    let Some(peers) = tracker.locate(video, m) else { return out };
    let mut probes = Vec::new();
    for peer in peers {
        if let Some(c) = pool.reusable(peer, now) {
            out.reused += 1;
            probes.push(c);
            continue;
        }
        match puncher.punch(peer) {
            Some(r) => {
                out.punched += 1;
                out.setup_latency = out.setup_latency.max(r.delay);
                let c = PeerConnection { peer_id: peer, established_at: now + r.delay, last_used_at: now + r.delay, rtt: r.rtt, loss: r.loss, nat_ok: true };
                pool.insert(c);
                probes.push(c);
            }
            None => out.failed += 1,
        }
    }
    out.connections = filter_peers(probes, limits);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VideoId;

    fn conn(id: u32, rtt_ms: u64, loss: f64) -> PeerConnection {
        PeerConnection {
            peer_id: PeerId(id),
            established_at: SimTime::ZERO,
            last_used_at: SimTime::ZERO,
            rtt: SimDuration::from_millis(rtt_ms),
            loss,
            nat_ok: true,
        }
    }

    #[test]
    fn filter_drops_slow_and_lossy() {
        let kept = filter_peers(vec![conn(1, 800, 0.0), conn(2, 40, 0.01), conn(3, 20, 0.2), conn(4, 30, 0.0)], &FilterLimits::default());
        assert_eq!(kept.iter().map(|c| c.peer_id.0).collect::<Vec<_>>(), vec![4, 2]);
        assert!(filter_peers(vec![conn(1, 800, 0.0)], &FilterLimits::default()).is_empty());
    }

    struct Fixed(Vec<PeerId>);
    impl TrackerClient for Fixed {
        fn locate(&mut self, _: VideoId, _: usize) -> Option<Vec<PeerId>> {
            Some(self.0.clone())
        }
    }

    struct Counting {
        calls: usize,
        fail: bool,
    }
    impl Puncher for Counting {
        fn punch(&mut self, _: PeerId) -> Option<PunchResult> {
            self.calls += 1;
            (!self.fail).then_some(PunchResult { delay: SimDuration::from_millis(250), rtt: SimDuration::from_millis(30), loss: 0.0 })
        }
    }

    #[test]
    fn retained_connection_is_reused_until_it_expires() {
        let mut pool = ConnectionPool::new(SimDuration::from_secs(120));
        let mut p = Counting { calls: 0, fail: false };
        let lim = FilterLimits::default();
        let first = acquire_connections(&mut Fixed(vec![PeerId(1)]), &mut p, &mut pool, &lim, VideoId(0), 5, SimTime::ZERO);
        assert_eq!((first.punched, p.calls), (1, 1));
        let t60 = SimTime::from_secs_f64(60.25);
        let again = acquire_connections(&mut Fixed(vec![PeerId(1)]), &mut p, &mut pool, &lim, VideoId(0), 5, t60);
        assert_eq!((again.reused, p.calls), (1, 1));
        assert_eq!(again.setup_latency, SimDuration::ZERO);
        let t180 = SimTime::from_secs_f64(180.25);
        let late = acquire_connections(&mut Fixed(vec![PeerId(1)]), &mut p, &mut pool, &lim, VideoId(0), 5, t180);
        assert_eq!((late.punched, p.calls), (1, 2));
    }

    #[test]
    fn every_punch_failing_leaves_nothing() {
        let mut pool = ConnectionPool::new(SimDuration::from_secs(120));
        let mut p = Counting { calls: 0, fail: true };
        let got = acquire_connections(&mut Fixed(vec![PeerId(1), PeerId(2)]), &mut p, &mut pool, &FilterLimits::default(), VideoId(0), 5, SimTime::ZERO);
        assert!(got.connections.is_empty());
        assert_eq!(got.failed, 2);
    }
}
