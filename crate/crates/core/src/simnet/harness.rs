//! A single multipath transfer over modelled links, with real payloads.
//! Used to check reliability, reassembly and scheduler behaviour without
//! the rest of the world.

use bytes::Bytes;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ContentSource, PacketLayout, PeerId, VideoId};
use crate::peer::ChunkStore;
use crate::time::{SimDuration, SimTime};
use crate::transport::{DataRequest, PathId, PathSpec, ServeOutcome, SessionStats, TransferConfig, TransferSession};

use super::engine::EventQueue;
use super::link::Fifo;
use super::rng::{RngFactory, Stream};

/// Bytes of protocol header on every data frame.
pub const DATA_HEADER_BYTES: u64 = 28;

/// Bytes of a request frame carrying `n` sequence numbers.
pub fn request_frame_bytes(n: usize) -> u64 {
    30 + 8 * n as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessPath {
    pub one_way: SimDuration,
    pub rate_bps: u64,
    pub loss: f64,
    /// A path whose server lacks the video answers with rejects.
    pub holds_video: bool,
    /// The server goes silent at this time.
    pub fail_at: Option<SimTime>,
}

impl HarnessPath {
    pub fn new(rtt_ms: u64, rate_bps: u64, loss: f64) -> Self {
        Self { one_way: SimDuration::from_micros(rtt_ms * 500), rate_bps, loss, holds_video: true, fail_at: None }
    }
}

/// The client's shared access medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub rate_bps: u64,
    pub frame_overhead: SimDuration,
    /// Requests contend with data on the same medium.
    pub half_duplex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub paths: Vec<HarnessPath>,
    pub video_bytes: u64,
    pub chunk_bytes: u64,
    pub payload_bytes: u32,
    pub transfer: TransferConfig,
    pub medium: Option<Medium>,
    pub seed: u64,
    /// Full invariant scan after every event. Slow.
    pub check_invariants: bool,
    pub time_limit: SimDuration,
}

impl HarnessConfig {
    pub fn new(paths: Vec<HarnessPath>, video_bytes: u64, transfer: TransferConfig, seed: u64) -> Self {
        Self {
            paths,
            video_bytes,
            chunk_bytes: 1_000_000,
            payload_bytes: 1200,
            transfer,
            medium: None,
            seed,
            check_invariants: false,
            time_limit: SimDuration::from_secs(3600),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub completed: bool,
    pub completion: SimDuration,
    pub stats: SessionStats,
    /// Reassembled bytes equal the source content.
    pub reassembly_exact: bool,
    /// Every delivery continued exactly where the previous one ended.
    pub in_order: bool,
    pub invariant_violations: u64,
    pub first_violation: Option<String>,
    pub goodput_bps: f64,
    pub events: u64,
    /// Packets served per path.
    pub served: Vec<u64>,
    /// Arrival of each path's last packet.
    pub path_last_arrival: Vec<SimDuration>,
    /// Final delivered-rate forecast per path, packets per second.
    pub path_forecast: Vec<f64>,
}

impl HarnessReport {
    /// (received − unique) / unique.
    pub fn redundancy(&self) -> f64 {
        if self.stats.unique_delivered == 0 {
            0.0
        } else {
            (self.stats.packets_received - self.stats.unique_delivered) as f64 / self.stats.unique_delivered as f64
        }
    }
}

enum Ev {
    Request(DataRequest),
    AtMedium { path: usize, seq: u64, payload: Bytes },
    Data { path: usize, seq: u64, payload: Bytes },
    Reject { path: usize, seqs: Vec<u64> },
    Timer,
}

struct Run<'a> {
    cfg: &'a HarnessConfig,
    layout: PacketLayout,
    q: EventQueue<Ev>,
    session: TransferSession,
    stores: Vec<Option<ChunkStore>>,
    uplinks: Vec<Fifo>,
    medium: Option<Fifo>,
    rngs: Vec<ChaCha8Rng>,
    buffer: Vec<u8>,
    filled: Vec<bool>,
    exact: bool,
    in_order: bool,
    delivered_to: u64,
    timer_at: Option<SimTime>,
    violations: u64,
    first_violation: Option<String>,
    served: Vec<u64>,
}

const VIDEO: VideoId = VideoId(0);

impl Run<'_> {
    fn send(&mut self, req: DataRequest, now: SimTime) {
        let path = req.path_id.0 as usize;
        let depart = match (&mut self.medium, self.cfg.medium) {
            (Some(m), Some(spec)) if spec.half_duplex => m.send(now, request_frame_bytes(req.packet_seqs.len())),
            _ => now,
        };
        if self.rngs[path].random::<f64>() < self.cfg.paths[path].loss {
            return;
        }
        self.q.schedule(depart + self.cfg.paths[path].one_way, Ev::Request(req));
    }

    fn pump(&mut self, now: SimTime) {
        for req in self.session.pump_all(now) {
            self.send(req, now);
        }
        if let Some(d) = self.session.next_deadline() {
            if self.timer_at.is_none_or(|t| d < t || t < now) {
                self.timer_at = Some(d);
                self.q.schedule(d, Ev::Timer);
            }
        }
    }

    fn serve(&mut self, req: DataRequest, now: SimTime) {
        let path = req.path_id.0 as usize;
        let spec = &self.cfg.paths[path];
        if spec.fail_at.is_some_and(|t| t <= now) {
            return;
        }
        let Some(store) = self.stores[path].as_mut() else {
            self.q.schedule(now + spec.one_way, Ev::Reject { path, seqs: req.packet_seqs });
            return;
        };
        let one_way = spec.one_way;
        let loss = spec.loss;
        let mut rejects = Vec::new();
        for out in crate::transport::serve_request(store, &req, now) {
            match out {
                ServeOutcome::Packet(p) => {
                    self.served[path] += 1;
                    let done = self.uplinks[path].send(now, p.payload.len() as u64 + DATA_HEADER_BYTES);
                    if self.rngs[path].random::<f64>() >= loss {
                        self.q.schedule(done + one_way, Ev::AtMedium { path, seq: p.packet_seq, payload: p.payload });
                    }
                }
                ServeOutcome::Reject { seq, .. } => rejects.push(seq),
            }
        }
        if !rejects.is_empty() {
            self.q.schedule(now + one_way, Ev::Reject { path, seqs: rejects });
        }
    }

    fn receive(&mut self, path: usize, seq: u64, payload: Bytes, now: SimTime) {
        let ev = self.session.on_packet(PathId(path as u32), seq, now);
        if ev.violation {
            return;
        }
        let r = self.layout.byte_range(seq);
        let slot = &mut self.buffer[r.start as usize..r.end as usize];
        if self.filled[seq as usize] {
            self.exact &= slot == &payload[..];
        } else {
            if payload.len() == slot.len() {
                slot.copy_from_slice(&payload);
            } else {
                self.exact = false;
            }
            self.filled[seq as usize] = true;
        }
        if !ev.delivered.is_empty() {
            self.in_order &= ev.delivered.start == self.delivered_to && (ev.delivered.start..ev.delivered.end).all(|s| self.filled[s as usize]);
            self.delivered_to = ev.delivered.end;
        }
        self.pump(now);
    }
}

/// Runs one transfer of a whole video of `video_bytes` to completion.
pub fn run_transfer(cfg: &HarnessConfig) -> crate::Result<HarnessReport> {
    let layout = PacketLayout::new(cfg.video_bytes, cfg.chunk_bytes, cfg.payload_bytes);
    let specs: Vec<PathSpec> = cfg
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathSpec { peer_id: PeerId(i as u32), initial_rtt: SimDuration(p.one_way.0 * 2), prior_rate: None })
        .collect();
    let session = TransferSession::open(VIDEO, &layout, 0..cfg.video_bytes, &specs, cfg.transfer, SimTime::ZERO)?;
    let factory = RngFactory::new(cfg.seed);
    let stores = cfg
        .paths
        .iter()
        .map(|p| {
            p.holds_video.then(|| {
                let mut s = ChunkStore::new(cfg.video_bytes, cfg.chunk_bytes, cfg.payload_bytes);
                s.place_video(VIDEO, cfg.video_bytes).expect("store sized for the video");
                s
            })
        })
        .collect();
    let n = layout.packet_count() as usize;
    let mut run = Run {
        cfg,
        layout,
        q: EventQueue::default(),
        session,
        stores,
        uplinks: cfg.paths.iter().map(|p| Fifo::new(p.rate_bps, SimDuration::ZERO)).collect(),
        medium: cfg.medium.map(|m| Fifo::new(m.rate_bps, m.frame_overhead)),
        rngs: (0..cfg.paths.len()).map(|i| factory.stream(Stream::Harness, i as u64)).collect(),
        buffer: vec![0; cfg.video_bytes as usize],
        filled: vec![false; n],
        exact: true,
        in_order: true,
        delivered_to: 0,
        timer_at: None,
        violations: 0,
        first_violation: None,
        served: vec![0; cfg.paths.len()],
    };
    run.pump(SimTime::ZERO);
    let limit = SimTime::ZERO + cfg.time_limit;
    while !run.session.is_complete() {
        let Some((now, ev)) = run.q.pop() else { break };
        if now > limit {
            break;
        }
        match ev {
            Ev::Request(req) => run.serve(req, now),
            Ev::AtMedium { path, seq, payload } => match run.medium.as_mut() {
                Some(m) => {
                    let done = m.send(now, payload.len() as u64 + DATA_HEADER_BYTES);
                    run.q.schedule(done, Ev::Data { path, seq, payload });
                }
                None => run.receive(path, seq, payload, now),
            },
            Ev::Data { path, seq, payload } => run.receive(path, seq, payload, now),
            Ev::Reject { path, seqs } => {
                run.session.on_reject(PathId(path as u32), &seqs, now);
                run.pump(now);
            }
            Ev::Timer => {
                if run.timer_at == Some(now) {
                    run.timer_at = None;
                }
                run.session.poll_timers(now);
                run.pump(now);
            }
        }
        if cfg.check_invariants {
            if let Err(e) = run.session.check_invariants() {
                run.violations += 1;
                run.first_violation.get_or_insert(e);
            }
        }
    }
    let completed = run.session.is_complete();
    let completion = run.q.now().since(SimTime::ZERO);
    let mut exact = run.exact && completed && run.filled.iter().all(|&f| f);
    if exact {
        let mut at = 0usize;
        for chunk in 0..layout.chunk_count() {
            let len = (cfg.video_bytes - chunk * cfg.chunk_bytes).min(cfg.chunk_bytes);
            let want = ContentSource::chunk_payload(VIDEO, chunk as u32, len);
            exact &= run.buffer[at..at + len as usize] == want[..];
            at += len as usize;
        }
    }
    Ok(HarnessReport {
        completed,
        completion,
        stats: run.session.stats(),
        reassembly_exact: exact,
        in_order: run.in_order && run.delivered_to == n as u64,
        invariant_violations: run.violations,
        first_violation: run.first_violation,
        goodput_bps: if completion.0 > 0 { cfg.video_bytes as f64 * 8.0 / completion.as_secs_f64() } else { 0.0 },
        events: run.q.fired(),
        path_last_arrival: run.session.paths().iter().map(|p| p.received_log().last().map_or(SimDuration::ZERO, |r| r.at.since(SimTime::ZERO))).collect(),
        path_forecast: run.session.paths().iter().map(|p| p.forecast.predicted_rate).collect(),
        served: run.served,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SchedulerPolicy;

    #[test]
    fn clean_single_path_runs_near_link_rate() {
        let cfg = HarnessConfig::new(vec![HarnessPath::new(20, 8_000_000, 0.0)], 1_000_000, TransferConfig::default(), 1);
        let r = run_transfer(&cfg).unwrap();
        assert!(r.completed && r.reassembly_exact && r.in_order);
        assert_eq!(r.stats.redundant, 0);
        // payload share of the wire bytes
        let ceiling = 8e6 * 1200.0 / (1200.0 + DATA_HEADER_BYTES as f64);
        assert!(r.goodput_bps > 0.85 * ceiling && r.goodput_bps <= ceiling * 1.0001, "{}", r.goodput_bps);
    }

    #[test]
    fn lossy_paths_and_a_rejecting_server_still_complete() {
        let mut paths = vec![HarnessPath::new(30, 4_000_000, 0.2), HarnessPath::new(60, 4_000_000, 0.1), HarnessPath::new(40, 4_000_000, 0.0)];
        paths[2].holds_video = false;
        let mut cfg = HarnessConfig::new(paths, 300_000, TransferConfig { policy: SchedulerPolicy::MINRTT, ..Default::default() }, 9);
        cfg.check_invariants = true;
        let r = run_transfer(&cfg).unwrap();
        assert!(r.completed && r.reassembly_exact && r.in_order, "{r:?}");
        assert_eq!(r.invariant_violations, 0, "{:?}", r.first_violation);
        assert_eq!(r.served[2], 0);
    }
}
