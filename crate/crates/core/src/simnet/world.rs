//! The whole system on one event queue: clients watching videos through the
//! hybrid pipeline, peers serving and ingesting, the tracker and the CDN.
//!
//! Packets in the world carry no payload. Peers still verify each chunk's
//! stored digest before serving from it; the byte-level transport is
//! exercised by the transfer harness.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Range;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::client::{
    acquire_connections, entry_blocker, evaluate_entry, evaluate_fallback, next_download, Acquired, ClientEvent, ConnectionPool, EntryCheck,
    EventKind, FallbackCause, FilterLimits, PeerConnection, PlaybackState, PlayerEvent, PlayerState, PunchResult, Puncher, RateWindow,
    SessionFacts, SwitchMode, SwitchState, SwitchThresholds, TrackerClient,
};
use crate::error::{Error, Result};
use crate::model::{segment_video, NatClass, Network, PacketLayout, PeerId, RegionId, Segment, VideoCatalogEntry, VideoId};
use crate::peer::{content_checksum, ChunkStore, Ingest, PeerProfile, PeerServer};
use crate::time::{SimDuration, SimTime};
use crate::tracker::{CacheCommand, ClientProfile, CopySource, HeartbeatReport, Tracker};
use crate::transport::{PathId, PathSpec, SessionStats, TransferConfig, TransferSession, Unavailable};

use super::cdn::CdnModel;
use super::config::{Placement, ScenarioConfig};
use super::engine::EventQueue;
use super::harness::{request_frame_bytes, DATA_HEADER_BYTES};
use super::link::Fifo;
use super::metrics::{compute_metrics, FailureRecord, MetricsReport, RunLog, SegmentRecord, TransportTotals, VideoRecord};
use super::nat::NatModel;
use super::rng::{RngFactory, Stream};
use super::workload::{arrivals, weighted_index, RequestTrace};

/// Simulated time allowed past the horizon for running videos to finish.
const DRAIN: SimDuration = SimDuration(3600 * 1_000_000);

/// What a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: RunLog,
    /// JSON lines: client events and system events in time order.
    pub events: Vec<String>,
}

/// Runs one scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    World::new(cfg)?.run()
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    one_way: SimDuration,
    loss: f64,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SystemEvent {
    PeerOffline { peer: PeerId },
    CycleEnd { decisions: usize },
    Distribute { video: VideoId, peer: PeerId },
    IngestStart { peer: PeerId, video: VideoId, victims: Vec<VideoId> },
    IngestDone { peer: PeerId, video: VideoId },
    IngestRolledBack { peer: PeerId, video: VideoId },
    ChunkRepaired { peer: PeerId, video: VideoId, chunk: u32 },
}

#[derive(Serialize)]
struct SystemLine {
    t: f64,
    #[serde(flatten)]
    event: SystemEvent,
}

enum Ev {
    ClientStart { client: usize },
    LocateAtTracker { client: usize, watch: u32 },
    LocateReply { client: usize, watch: u32, peers: Vec<PeerId> },
    ConnectReady { client: usize, watch: u32, acquired: Acquired },
    Tick { client: usize, watch: u32 },
    Wake { client: usize, watch: u32 },
    CdnBlock { client: usize, gen: u64, end: u64 },
    RequestAtPeer { client: usize, gen: u64, path: u32, peer: usize, video: VideoId, seqs: Vec<u64> },
    PacketAtMedium { client: usize, gen: u64, path: u32, seq: u64, len: u64, cached: bool },
    PacketDeliver { client: usize, gen: u64, path: u32, seq: u64, len: u64, cached: bool },
    RejectAtClient { client: usize, gen: u64, path: u32, seqs: Vec<u64> },
    SessionTimer { client: usize, gen: u64 },
    PeerError { client: usize, peer: usize },
    Heartbeat { peer: usize },
    HeartbeatAtTracker { report: HeartbeatReport },
    HeartbeatReply { peer: usize, commands: Vec<CacheCommand> },
    IngestStep { peer: usize, op: u64, seq: u32, size: u64, from_peer: bool },
    StoreConfirm { peer: usize, video: VideoId },
    Repair { peer: usize, video: VideoId, chunk: u32 },
    CycleEnd,
    MassFailure,
}

enum Job {
    Cdn,
    Pcdn { session: Box<TransferSession>, timer_at: Option<SimTime> },
}

struct Download {
    seg: u32,
    gen: u64,
    started: SimTime,
    job: Job,
}

struct Watch {
    ordinal: u32,
    entry: VideoCatalogEntry,
    layout: PacketLayout,
    segments: Vec<Segment>,
    /// Bytes each segment is responsible for: whole packets, tiling the video.
    owned: Vec<Range<u64>>,
    segment_len: f64,
    think: f64,
    player: PlaybackState,
    switch: SwitchState,
    rate: RateWindow,
    record: VideoRecord,
    downloaded: u32,
    download: Option<Download>,
    /// Contiguous bytes handed to the player.
    delivered: u64,
    connections: Vec<PeerConnection>,
    connected_at: Option<SimTime>,
    pcdn_error: bool,
    connect_deadline: SimTime,
    last_tick: SimTime,
    tick_bytes: u64,
    cdn_open: bool,
    blocked: Option<EntryCheck>,
    wake_at: Option<SimTime>,
}

impl Watch {
    fn playing_segment(&self) -> u32 {
        let p = self.player.position;
        let i = self.segments.partition_point(|s| s.start <= p + 1e-9);
        (i.max(1) - 1) as u32
    }

    fn pcdn_active(&self) -> bool {
        matches!(self.download, Some(Download { job: Job::Pcdn { .. }, .. }))
    }
}

struct Client {
    region: RegionId,
    nat: NatClass,
    trace_rng: ChaCha8Rng,
    nat_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    pool: ConnectionPool,
    medium: Fifo,
    /// Indexed by peer id.
    pairs: Vec<Pair>,
    watch: Option<Watch>,
    videos_started: u32,
    gen: u64,
    completed: BTreeSet<u64>,
    done: bool,
}

struct IngestRun {
    id: u64,
    op: Ingest,
    source: CopySource,
    fresh: bool,
}

struct PeerNode {
    server: PeerServer,
    uplink: Fifo,
    ingest: Option<IngestRun>,
    queue: VecDeque<CacheCommand>,
    repairing: BTreeSet<(VideoId, u32)>,
}

struct Located(Vec<PeerId>);

impl TrackerClient for Located {
    fn locate(&mut self, _video: VideoId, m: usize) -> Option<Vec<PeerId>> {
        Some(self.0.iter().take(m).copied().collect())
    }
}

struct Punch<'a> {
    nat: &'a NatModel,
    me: NatClass,
    rng: &'a mut ChaCha8Rng,
    peers: &'a [PeerNode],
    pairs: &'a [Pair],
}

impl Puncher for Punch<'_> {
    fn punch(&mut self, peer: PeerId) -> Option<PunchResult> {
        let node = self.peers.get(peer.0 as usize)?;
        let delay = self.nat.punch(self.me, node.server.profile.nat, self.rng)?;
        if !node.server.online {
            return None;
        }
        let p = self.pairs[peer.0 as usize];
        Some(PunchResult { delay, rtt: SimDuration(p.one_way.0 * 2), loss: p.loss })
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn harvest(t: &mut TransportTotals, s: &SessionStats) {
    t.sessions += 1;
    t.packets_received += s.packets_received;
    t.unique_received += s.packets_received - s.redundant;
    t.redundant += s.redundant;
    t.timeouts += s.timeouts;
    t.gap_losses += s.gap_losses;
    t.rejects += s.rejects;
    t.requests_sent += s.requests_sent;
    t.duplicates_requested += s.duplicates_requested;
    t.protocol_violations += s.protocol_violations;
}

fn owned_ranges(layout: &PacketLayout, segments: &[Segment]) -> Vec<Range<u64>> {
    let start = |s: &Segment| {
        let seq = layout.first_seq_at_or_after(s.byte_range.start);
        if seq >= layout.packet_count() {
            layout.video_size
        } else {
            layout.byte_range(seq).start
        }
    };
    let starts: Vec<u64> = segments.iter().map(start).collect();
    (0..starts.len()).map(|i| starts[i]..starts.get(i + 1).copied().unwrap_or(layout.video_size)).collect()
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    catalog: Vec<VideoCatalogEntry>,
    trace: RequestTrace,
    transfer: TransferConfig,
    thresholds: SwitchThresholds,
    filter: FilterLimits,
    nat: NatModel,
    cdn: CdnModel,
    q: EventQueue<Ev>,
    clients: Vec<Client>,
    peers: Vec<PeerNode>,
    tracker: Tracker,
    log: RunLog,
    lines: Vec<String>,
    tracker_delay: SimDuration,
    peer_delay: SimDuration,
    horizon: SimTime,
    remaining: usize,
    next_op: u64,
    faults: ChaCha8Rng,
    failure_at: Option<SimTime>,
    /// Clients on PCDN when the failure hit that have not yet fallen back.
    failure_pending: BTreeSet<usize>,
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let factory = RngFactory::new(cfg.seed);
        let catalog = cfg.build_catalog()?;
        if catalog.is_empty() {
            return Err(Error::invalid("catalog", "no videos"));
        }
        for (i, e) in catalog.iter().enumerate() {
            if e.video_id.0 as usize != i {
                return Err(Error::invalid("catalog", "video ids must be 0..n in order"));
            }
        }
        let trace = RequestTrace::new(&cfg.workload_spec(catalog.len()))?;
        let nat = cfg.nat_model();
        let links = &cfg.links;
        let frame = SimDuration::from_micros(links.frame_overhead_us);

        let peer_weights: Vec<f64> = cfg.regions.iter().map(|r| r.peer_weight).collect();
        let client_weights: Vec<f64> = cfg.regions.iter().map(|r| r.client_weight).collect();
        let vendor_weights: Vec<f64> = cfg.vendors.iter().map(|v| v.weight).collect();
        let heartbeat = SimDuration::from_secs_f64(cfg.cycle.heartbeat_s);

        let mut peers: Vec<PeerNode> = (0..cfg.peers.count)
            .map(|i| {
                let mut rng = factory.stream(Stream::Peer, i as u64);
                let region = RegionId(weighted_index(&peer_weights, &mut rng) as u32);
                let vendor = weighted_index(&vendor_weights, &mut rng) as u32;
                let nat_class = nat.draw_class(&mut rng);
                let uplink_bps = rng.random_range(cfg.peers.uplink_bps.0..=cfg.peers.uplink_bps.1);
                let first_beat = SimTime::from_secs_f64(rng.random::<f64>() * cfg.cycle.heartbeat_s);
                let store = ChunkStore::new(cfg.peers.capacity_bytes, cfg.catalog.chunk_bytes, cfg.catalog.payload_bytes);
                let profile = PeerProfile { peer_id: PeerId(i), region, vendor, nat: nat_class, uplink_bps };
                PeerNode {
                    server: PeerServer::new(profile, store, heartbeat, first_beat),
                    uplink: Fifo::new(uplink_bps, frame),
                    ingest: None,
                    queue: VecDeque::new(),
                    repairing: BTreeSet::new(),
                }
            })
            .collect();

        let sizes: BTreeMap<VideoId, u64> = catalog.iter().map(|e| (e.video_id, e.size)).collect();
        let mut tracker = Tracker::new(cfg.cycle.tracker(), sizes);
        // everyone joins at t = 0, before initial placement is indexed
        for node in &peers {
            tracker.register(&node.server.announce(), SimTime::ZERO);
        }
        let mut initial = 0u64;
        let mut placement = factory.stream(Stream::Placement, 0);
        let place = |peers: &mut [PeerNode], tracker: &mut Tracker, p: usize, e: &VideoCatalogEntry| -> bool {
            let store = &mut peers[p].server.store;
            if store.holds_video(e.video_id) || store.place_video(e.video_id, e.size).is_err() {
                return false;
            }
            tracker.seed_copy(PeerId(p as u32), e.video_id);
            true
        };
        if !peers.is_empty() {
            match cfg.peers.placement {
                Placement::None => {}
                Placement::Uniform => {
                    let mut order: Vec<usize> = (0..peers.len()).collect();
                    for e in &catalog {
                        order.shuffle(&mut placement);
                        let mut placed = 0;
                        for &p in &order {
                            if placed >= cfg.peers.initial_copies {
                                break;
                            }
                            if place(&mut peers, &mut tracker, p, e) {
                                placed += 1;
                            }
                        }
                        initial += u64::from(placed);
                    }
                }
                Placement::UniformBudget => {
                    let mut tries = 0u64;
                    while initial < cfg.peers.copy_budget && tries < cfg.peers.copy_budget * 50 + 100 {
                        tries += 1;
                        let v = placement.random_range(0..catalog.len());
                        let p = placement.random_range(0..peers.len());
                        if place(&mut peers, &mut tracker, p, &catalog[v]) {
                            initial += 1;
                        }
                    }
                }
            }
        }
        let mut faults = factory.stream(Stream::Faults, 0);
        for _ in 0..cfg.peers.corrupt_chunks {
            let holders: Vec<usize> = (0..peers.len()).filter(|&p| peers[p].server.store.videos().next().is_some()).collect();
            let Some(&p) = holders.choose(&mut faults) else { break };
            let store = &mut peers[p].server.store;
            let held: Vec<(VideoId, u64)> = store.videos().map(|v| (v.video_id, v.size)).collect();
            let (v, size) = held[faults.random_range(0..held.len())];
            let chunks = size.div_ceil(cfg.catalog.chunk_bytes).max(1);
            let seq = faults.random_range(0..chunks) as u32;
            let bit = faults.random_range(0..cfg.catalog.chunk_bytes.min(size) * 8);
            store.inject_corruption(v, seq, bit);
        }
        for node in &peers {
            tracker.register(&node.server.announce(), SimTime::ZERO);
        }

        let mut arrival_rng = factory.stream(Stream::Client, u64::from(u32::MAX) + 1);
        let starts = arrivals(cfg.workload.clients, cfg.workload.arrival_rate, &mut arrival_rng);
        let clients: Vec<Client> = (0..cfg.workload.clients)
            .map(|i| {
                let mut trace_rng = factory.stream(Stream::Client, i as u64);
                let region = RegionId(weighted_index(&client_weights, &mut trace_rng) as u32);
                let nat_class = nat.draw_class(&mut trace_rng);
                let pairs = peers
                    .iter()
                    .map(|p| {
                        let pid = p.server.profile.peer_id.0 as u64;
                        let mut rng = factory.stream(Stream::Path, (u64::from(i) << 24) | pid);
                        let same = p.server.profile.region == region;
                        let d = uniform(&mut rng, if same { links.same_region_delay_ms } else { links.cross_region_delay_ms });
                        let loss = uniform(&mut rng, links.loss);
                        Pair { one_way: SimDuration::from_secs_f64(d / 1e3), loss }
                    })
                    .collect();
                Client {
                    region,
                    nat: nat_class,
                    trace_rng,
                    nat_rng: factory.stream(Stream::Nat, i as u64),
                    loss_rng: factory.stream(Stream::Path, (1 << 47) | u64::from(i)),
                    pool: ConnectionPool::new(SimDuration::from_secs_f64(cfg.thresholds.retention_s)),
                    medium: Fifo::new(links.client_bandwidth_bps, frame),
                    pairs,
                    watch: None,
                    videos_started: 0,
                    gen: 0,
                    completed: BTreeSet::new(),
                    done: false,
                }
            })
            .collect();

        let mut q = EventQueue::default();
        for (i, t) in starts.iter().enumerate() {
            q.schedule(SimTime::from_secs_f64(*t), Ev::ClientStart { client: i });
        }
        for (p, node) in peers.iter().enumerate() {
            q.schedule(node.server.next_heartbeat(), Ev::Heartbeat { peer: p });
        }
        q.schedule(SimTime::ZERO + SimDuration::from_secs_f64(cfg.cycle.length_s), Ev::CycleEnd);
        let failure_at = cfg.peers.failure.map(|f| SimTime::from_secs_f64(f.at_s));
        if let Some(at) = failure_at {
            q.schedule(at, Ev::MassFailure);
        }

        let thresholds = cfg.thresholds.switch();
        let log = RunLog {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            scheduler: cfg.scheduler.policy.name().to_string(),
            segment: cfg.catalog.segment_s.label(),
            hybrid: cfg.hybrid,
            initial_copies: initial,
            cdn_cost_per_gb: cfg.cost.cdn_per_gb,
            peer_cost_per_gb: cfg.cost.peer_per_gb,
            failure_stall: cfg.thresholds.failure_stall_s,
            eval_tick: thresholds.eval_tick.as_secs_f64(),
            ..Default::default()
        };
        let mid = (links.same_region_delay_ms.0 + links.same_region_delay_ms.1) / 2.0;
        Ok(Self {
            cfg,
            trace,
            transfer: cfg.scheduler.transfer(),
            thresholds,
            filter: cfg.thresholds.filter(),
            nat,
            cdn: cfg.cdn_model(),
            q,
            remaining: clients.len(),
            clients,
            peers,
            tracker,
            log,
            lines: Vec::new(),
            tracker_delay: SimDuration::from_secs_f64(links.tracker_delay_ms / 1e3),
            peer_delay: SimDuration::from_secs_f64(mid / 1e3),
            horizon: SimTime::from_secs_f64(cfg.workload.horizon_s),
            next_op: 0,
            faults,
            failure_at,
            failure_pending: BTreeSet::new(),
            catalog,
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        let limit = self.horizon + DRAIN;
        let mut now = SimTime::ZERO;
        while self.remaining > 0 {
            let Some((t, ev)) = self.q.pop() else { break };
            if t > limit {
                break;
            }
            now = t;
            self.dispatch(now, ev);
        }
        // anything still playing at the hard limit is cut off
        for c in 0..self.clients.len() {
            if self.clients[c].watch.is_some() {
                self.clients[c].done = true;
                self.end_video(c, now, true);
            }
        }
        self.log.tracker = self.tracker.stats();
        self.log.sim_seconds = now.as_secs_f64();
        self.log.events = self.q.fired();
        let report = compute_metrics(&self.log);
        Ok(RunOutput { report, log: self.log, events: self.lines })
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::ClientStart { client } => self.start_video(client, now),
            Ev::LocateAtTracker { client, watch } => self.on_locate(client, watch, now),
            Ev::LocateReply { client, watch, peers } => self.on_locate_reply(client, watch, peers, now),
            Ev::ConnectReady { client, watch, acquired } => self.on_connect_ready(client, watch, acquired, now),
            Ev::Tick { client, watch } => self.on_tick(client, watch, now),
            Ev::Wake { client, watch } => {
                if self.is_watch(client, watch) {
                    self.watch(client).wake_at = None;
                    self.try_start_next(client, now);
                }
            }
            Ev::CdnBlock { client, gen, end } => self.on_cdn_block(client, gen, end, now),
            Ev::RequestAtPeer { client, gen, path, peer, video, seqs } => self.on_request(client, gen, path, peer, video, seqs, now),
            Ev::PacketAtMedium { client, gen, path, seq, len, cached } => {
                let done = self.clients[client].medium.send(now, len + DATA_HEADER_BYTES);
                self.q.schedule(done, Ev::PacketDeliver { client, gen, path, seq, len, cached });
            }
            Ev::PacketDeliver { client, gen, path, seq, len, cached } => self.on_packet(client, gen, path, seq, len, cached, now),
            Ev::RejectAtClient { client, gen, path, seqs } => self.on_reject(client, gen, path, seqs, now),
            Ev::SessionTimer { client, gen } => self.on_timer(client, gen, now),
            Ev::PeerError { client, peer } => self.on_peer_error(client, peer, now),
            Ev::Heartbeat { peer } => self.on_heartbeat(peer, now),
            Ev::HeartbeatAtTracker { report } => self.on_heartbeat_at_tracker(report, now),
            Ev::HeartbeatReply { peer, commands } => {
                if self.peers[peer].server.online {
                    self.peers[peer].queue.extend(commands);
                    self.start_ingest(peer, now);
                }
            }
            Ev::IngestStep { peer, op, seq, size, from_peer } => self.on_ingest_step(peer, op, seq, size, from_peer, now),
            Ev::StoreConfirm { peer, video } => {
                if self.peers[peer].server.online {
                    self.tracker.on_store_confirm(PeerId(peer as u32), video);
                    self.log.distributed_copies += 1;
                }
            }
            Ev::Repair { peer, video, chunk } => {
                let node = &mut self.peers[peer];
                node.repairing.remove(&(video, chunk));
                if node.server.online && node.server.store.holds_chunk(video, chunk) {
                    node.server.store.repair_chunk(video, chunk);
                    self.log.peers.chunks_repaired += 1;
                    self.log.bytes.ingest_cdn += self.cfg.catalog.chunk_bytes;
                    self.system(now, SystemEvent::ChunkRepaired { peer: PeerId(peer as u32), video, chunk });
                }
            }
            Ev::CycleEnd => self.on_cycle_end(now),
            Ev::MassFailure => self.on_mass_failure(now),
        }
    }

    fn client_event(&mut self, now: SimTime, client: usize, kind: EventKind) {
        let e = ClientEvent { t: now.as_secs_f64(), client: client as u32, kind };
        self.lines.push(serde_json::to_string(&e).expect("event serializes"));
    }

    fn system(&mut self, now: SimTime, event: SystemEvent) {
        let line = SystemLine { t: now.as_secs_f64(), event };
        self.lines.push(serde_json::to_string(&line).expect("event serializes"));
    }

    fn is_watch(&self, c: usize, ordinal: u32) -> bool {
        self.clients[c].watch.as_ref().is_some_and(|w| w.ordinal == ordinal)
    }

    fn watch(&mut self, c: usize) -> &mut Watch {
        self.clients[c].watch.as_mut().expect("client is watching")
    }

    // ---- clients ----

    fn start_video(&mut self, c: usize, now: SimTime) {
        if now >= self.horizon {
            self.clients[c].done = true;
            self.remaining -= 1;
            return;
        }
        let client = &mut self.clients[c];
        let video = self.trace.video(&mut client.trace_rng);
        let watch_target = self.trace.watch_target(&mut client.trace_rng);
        let think = self.trace.think(&mut client.trace_rng);
        let entry = self.catalog[video.0 as usize].clone();
        let segment_len = self.cfg.catalog.segment_s.resolve(entry.duration);
        let segments = segment_video(&entry, segment_len);
        let layout = PacketLayout::new(entry.size, self.cfg.catalog.chunk_bytes, self.cfg.catalog.payload_bytes);
        let owned = owned_ranges(&layout, &segments);
        let ordinal = client.videos_started;
        client.videos_started += 1;
        let t = &self.cfg.thresholds;
        let player = PlaybackState::new(entry.duration, now, t.startup_buffer_s, t.resume_buffer_s, watch_target);
        let record = VideoRecord {
            client: c as u32,
            ordinal,
            video,
            duration: entry.duration,
            size: entry.size,
            hybrid: self.cfg.hybrid,
            startup_latency: None,
            pcdn_unavailable: false,
            entered_pcdn: false,
            fallback: None,
            played: 0.0,
            rebuffer_events: 0,
            rebuffer_time: 0.0,
            longest_stall: 0.0,
            abandoned: false,
            waste_bytes: 0,
            player_bytes: 0,
            segments: Vec::new(),
        };
        let count = segments.len() as u32;
        client.watch = Some(Watch {
            ordinal,
            entry,
            layout,
            segments,
            owned,
            segment_len,
            think,
            player,
            switch: SwitchState::new(self.thresholds),
            rate: RateWindow::default(),
            record,
            downloaded: 0,
            download: None,
            delivered: 0,
            connections: Vec::new(),
            connected_at: None,
            pcdn_error: false,
            connect_deadline: now + self.thresholds.connect_timeout,
            last_tick: now,
            tick_bytes: 0,
            cdn_open: false,
            blocked: None,
            wake_at: None,
        });
        self.client_event(now, c, EventKind::VideoStart { video, segments: count, watch_target: player_target(&self.clients[c]) });
        if self.cfg.hybrid {
            self.q.schedule(now + self.tracker_delay, Ev::LocateAtTracker { client: c, watch: ordinal });
        }
        self.q.schedule(now + self.thresholds.eval_tick, Ev::Tick { client: c, watch: ordinal });
        self.try_start_next(c, now);
    }

    fn on_locate(&mut self, c: usize, ordinal: u32, now: SimTime) {
        let Some(w) = self.clients[c].watch.as_ref().filter(|w| w.ordinal == ordinal) else { return };
        let video = w.entry.video_id;
        let profile = ClientProfile { region: self.clients[c].region, nat: self.clients[c].nat };
        let peers = self.tracker.locate(video, profile, now).into_iter().map(|s| s.peer_id).collect();
        self.q.schedule(now + self.tracker_delay, Ev::LocateReply { client: c, watch: ordinal, peers });
    }

    fn on_locate_reply(&mut self, c: usize, ordinal: u32, peers: Vec<PeerId>, now: SimTime) {
        if !self.is_watch(c, ordinal) {
            return;
        }
        let holders = peers.len();
        let video = self.watch(c).entry.video_id;
        let m = self.cfg.cycle.return_m;
        let client = &mut self.clients[c];
        let mut punch = Punch { nat: &self.nat, me: client.nat, rng: &mut client.nat_rng, peers: &self.peers, pairs: &client.pairs };
        let acquired = acquire_connections(&mut Located(peers), &mut punch, &mut client.pool, &self.filter, video, m, now);
        if acquired.connections.is_empty() {
            let reason = if holders == 0 {
                "no holders"
            } else if acquired.punched + acquired.reused == 0 {
                "punch failed"
            } else {
                "filtered"
            };
            self.mark_unavailable(c, reason, now);
            return;
        }
        self.q.schedule(now + acquired.setup_latency, Ev::ConnectReady { client: c, watch: ordinal, acquired });
    }

    fn mark_unavailable(&mut self, c: usize, reason: &str, now: SimTime) {
        let w = self.watch(c);
        w.pcdn_error = true;
        w.record.pcdn_unavailable = true;
        let video = w.entry.video_id;
        self.client_event(now, c, EventKind::PcdnUnavailable { video, reason: reason.into() });
    }

    fn on_connect_ready(&mut self, c: usize, ordinal: u32, acquired: Acquired, now: SimTime) {
        if !self.is_watch(c, ordinal) {
            return;
        }
        let client = &mut self.clients[c];
        let w = client.watch.as_mut().expect("checked");
        // a peer that failed while the punch was in progress was dropped
        w.connections = acquired.connections.into_iter().filter(|p| client.pool.reusable(p.peer_id, now).is_some()).collect();
        if w.connections.is_empty() {
            self.mark_unavailable(c, "peers lost", now);
            return;
        }
        w.connected_at = Some(now);
        let kind = EventKind::PcdnReady {
            video: w.entry.video_id,
            peers: w.connections.len(),
            latency: now.since(w.player.requested_at).as_secs_f64(),
            reused: acquired.reused,
        };
        self.client_event(now, c, kind);
        self.try_start_next(c, now);
    }

    fn on_tick(&mut self, c: usize, ordinal: u32, now: SimTime) {
        if !self.is_watch(c, ordinal) || !self.advance_player(c, now) {
            return;
        }
        let window = self.thresholds.rate_window;
        let w = self.watch(c);
        if let Some(d) = w.download.as_ref().filter(|_| w.pcdn_active()) {
            let dt = now.since(w.last_tick.max(d.started));
            w.rate.push(dt, w.tick_bytes, window);
        }
        w.last_tick = now;
        w.tick_bytes = 0;
        if w.pcdn_active() || w.pcdn_error {
            self.check_fallback(c, now);
        }
        if self.cfg.output.log_ticks {
            let w = self.watch(c);
            let kind = EventKind::Tick { video: w.entry.video_id, mode: w.switch.mode, buffer: w.player.buffer_level(), rate_bps: w.rate.rate_bps(window) };
            self.client_event(now, c, kind);
        }
        self.try_start_next(c, now);
        if self.is_watch(c, ordinal) {
            self.q.schedule(now + self.thresholds.eval_tick, Ev::Tick { client: c, watch: ordinal });
        }
    }

    /// Plays forward to `now`. False when the video ended.
    fn advance_player(&mut self, c: usize, now: SimTime) -> bool {
        let mut out = Vec::new();
        self.watch(c).player.advance(now, &mut out);
        self.player_events(c, out, now)
    }

    fn feed_player(&mut self, c: usize, now: SimTime) -> bool {
        let mut out = Vec::new();
        let w = self.watch(c);
        let available = w.entry.secs_at(w.delivered);
        w.player.add_media(now, available, &mut out);
        self.player_events(c, out, now)
    }

    fn player_events(&mut self, c: usize, events: Vec<PlayerEvent>, now: SimTime) -> bool {
        let mut ended = false;
        for e in events {
            let video = self.watch(c).entry.video_id;
            match e {
                PlayerEvent::Started { at } => {
                    let w = self.watch(c);
                    let latency = at.since(w.player.requested_at).as_secs_f64();
                    w.record.startup_latency = Some(latency);
                    self.client_event(at, c, EventKind::Startup { video, latency });
                }
                PlayerEvent::RebufferBegin { at, position } => self.client_event(at, c, EventKind::RebufferBegin { video, position }),
                PlayerEvent::RebufferEnd { at, stalled } => self.client_event(at, c, EventKind::RebufferEnd { video, stalled }),
                PlayerEvent::Ended { .. } | PlayerEvent::Abandoned { .. } => ended = true,
            }
        }
        if ended {
            self.end_video(c, now, false);
        }
        !ended
    }

    fn end_video(&mut self, c: usize, now: SimTime, cut_off: bool) {
        if cut_off {
            let mut out = Vec::new();
            self.watch(c).player.stop(now, &mut out);
        }
        self.cancel_download(c, now);
        let client = &mut self.clients[c];
        let mut w = client.watch.take().expect("client is watching");
        let p = &w.player;
        let abandoned = p.state == PlayerState::Abandoned;
        let waste = w.delivered.saturating_sub(w.entry.byte_at(p.position));
        let r = &mut w.record;
        r.played = p.position;
        r.rebuffer_events = p.rebuffer_events;
        r.rebuffer_time = p.rebuffer_time;
        r.longest_stall = p.longest_stall;
        r.abandoned = abandoned;
        r.waste_bytes = waste;
        r.player_bytes = w.delivered;
        if let Some(last) = r.segments.last_mut().filter(|s| s.seconds.is_none()) {
            // cut short: keep the record so bytes stay attributable
            last.seconds = None;
        }
        let kind = EventKind::VideoEnd { video: w.entry.video_id, position: p.position, abandoned, waste_bytes: waste, rebuffers: p.rebuffer_events };
        let think = w.think;
        self.log.videos.push(w.record);
        self.failure_pending.remove(&c);
        self.client_event(now, c, kind);
        if cut_off {
            return;
        }
        self.q.schedule(now + SimDuration::from_secs_f64(think), Ev::ClientStart { client: c });
    }

    fn facts(&mut self, c: usize, k: u32) -> SessionFacts {
        let t = self.thresholds;
        let bandwidth = self.cfg.links.client_bandwidth_bps as f64;
        let w = self.watch(c);
        let k = (k as usize).min(w.owned.len().saturating_sub(1));
        let bps = w.entry.bytes_per_sec();
        let min_remaining = (t.min_remaining_segments as f64 * w.segment_len * bps).round() as u64;
        SessionFacts {
            pcdn_error: w.pcdn_error,
            remaining_bytes: w.entry.size - w.owned.get(k).map_or(w.entry.size, |r| r.start),
            min_remaining_bytes: min_remaining.min(w.entry.size),
            user_bandwidth_bps: bandwidth,
            bitrate_bps: w.entry.bitrate as f64,
            connected_at: w.connected_at,
            connect_deadline: w.connect_deadline,
            buffer_level: w.player.buffer_level(),
            download_rate_bps: w.rate.rate_bps(t.rate_window),
        }
    }

    fn try_start_next(&mut self, c: usize, now: SimTime) {
        if !self.advance_player(c, now) {
            return;
        }
        let w = self.watch(c);
        if w.download.is_some() || w.player.is_finished() {
            return;
        }
        let count = w.segments.len() as u32;
        let playing = w.playing_segment();
        match next_download(playing, w.downloaded, count) {
            Some(k) => {
                if k > playing + 1 {
                    self.log.prefetch_violations += 1;
                }
                self.start_segment(c, k, now);
            }
            None if w.downloaded < count && w.player.state == PlayerState::Playing => {
                // the slot opens when playback reaches the last downloaded segment
                let boundary = w.segments[(w.downloaded - 1) as usize].start;
                let at = now + SimDuration::from_secs_f64((boundary - w.player.position).max(0.0)) + SimDuration(1);
                if w.wake_at.is_none_or(|t| t <= now || at < t) {
                    w.wake_at = Some(at);
                    let ordinal = w.ordinal;
                    self.q.schedule(at, Ev::Wake { client: c, watch: ordinal });
                }
            }
            None => {}
        }
    }

    fn start_segment(&mut self, c: usize, k: u32, now: SimTime) {
        let mut network = Network::Cdn;
        if self.cfg.hybrid && k > 0 {
            let facts = self.facts(c, k);
            let w = self.watch(c);
            let video = w.entry.video_id;
            match w.switch.mode {
                SwitchMode::CdnStartup => {
                    if evaluate_entry(&mut w.switch, &facts, now) {
                        w.record.entered_pcdn = true;
                        w.rate.clear();
                        network = Network::Pcdn;
                        self.client_event(now, c, EventKind::Mode { video, from: SwitchMode::CdnStartup, to: SwitchMode::Pcdn, cause: None });
                    } else {
                        let b = entry_blocker(&w.switch, &facts, now);
                        if b != w.blocked {
                            w.blocked = b;
                            if let Some(check) = b {
                                self.client_event(now, c, EventKind::EntryBlocked { video, segment: k, check });
                            }
                        }
                    }
                }
                SwitchMode::Pcdn => network = Network::Pcdn,
                SwitchMode::CdnFallback => {}
            }
            if network == Network::Pcdn && self.watch(c).connections.is_empty() {
                self.watch(c).pcdn_error = true;
                self.check_fallback(c, now);
                network = Network::Cdn;
            }
        }
        let client = &mut self.clients[c];
        client.gen += 1;
        let gen = client.gen;
        let w = client.watch.as_mut().expect("client is watching");
        let owned = w.owned[k as usize].clone();
        w.record.segments.push(SegmentRecord {
            index: k,
            network,
            bytes: owned.end - owned.start,
            cdn_bytes: 0,
            peer_bytes: 0,
            seconds: None,
            memory_packets: 0,
            disk_packets: 0,
        });
        debug_assert_eq!(w.delivered, owned.start);
        let video = w.entry.video_id;
        self.client_event(now, c, EventKind::SegmentStart { video, segment: k, network });
        let w = self.watch(c);
        if owned.is_empty() {
            w.download = Some(Download { seg: k, gen, started: now, job: Job::Cdn });
            self.complete_segment(c, now);
            self.try_start_next(c, now);
            return;
        }
        match network {
            Network::Cdn => {
                w.download = Some(Download { seg: k, gen, started: now, job: Job::Cdn });
                self.fetch_cdn(c, now);
            }
            Network::Pcdn => {
                let specs: Vec<PathSpec> =
                    w.connections.iter().map(|p| PathSpec { peer_id: p.peer_id, initial_rtt: p.rtt, prior_rate: None }).collect();
                let seqs = w.layout.packets_for(&owned);
                let session = TransferSession::open_packets(video, seqs, &specs, self.transfer, now).expect("connections are non-empty");
                let client = &mut self.clients[c];
                for s in &specs {
                    client.pool.touch(s.peer_id, now);
                }
                let w = client.watch.as_mut().expect("client is watching");
                w.download = Some(Download { seg: k, gen, started: now, job: Job::Pcdn { session: Box::new(session), timer_at: None } });
                self.pump(c, now);
            }
        }
    }

    /// Requests the rest of the current segment from the CDN.
    fn fetch_cdn(&mut self, c: usize, now: SimTime) {
        let w = self.watch(c);
        let d = w.download.as_ref().expect("download in progress");
        let (gen, end) = (d.gen, w.owned[d.seg as usize].end);
        let fresh = !w.cdn_open;
        w.cdn_open = true;
        let range = w.delivered..end;
        for (t, r) in self.cdn.fetch(range, now, fresh) {
            self.q.schedule(t, Ev::CdnBlock { client: c, gen, end: r.end });
        }
    }

    fn on_cdn_block(&mut self, c: usize, gen: u64, end: u64, now: SimTime) {
        let Some(w) = self.clients[c].watch.as_mut() else { return };
        let Some(d) = w.download.as_ref().filter(|d| d.gen == gen && matches!(d.job, Job::Cdn)) else { return };
        let seg_end = w.owned[d.seg as usize].end;
        let b = end - w.delivered;
        w.delivered = end;
        if let Some(s) = w.record.segments.last_mut() {
            s.cdn_bytes += b;
        }
        self.log.bytes.cdn += b;
        self.log.bytes.player += b;
        if end == seg_end {
            self.complete_segment(c, now);
        }
        if self.feed_player(c, now) {
            self.try_start_next(c, now);
        }
    }

    fn complete_segment(&mut self, c: usize, now: SimTime) {
        let client = &mut self.clients[c];
        let w = client.watch.as_mut().expect("client is watching");
        let d = w.download.take().expect("download in progress");
        if let Job::Pcdn { session, .. } = &d.job {
            harvest(&mut self.log.transport, &session.stats());
            client.completed.insert(d.gen);
            for p in session.paths() {
                client.pool.touch(p.peer_id, now);
            }
        }
        let seconds = now.since(d.started).as_secs_f64();
        w.downloaded += 1;
        let s = w.record.segments.last_mut().expect("segment record");
        s.seconds = Some(seconds);
        let kind = EventKind::SegmentDone {
            video: w.entry.video_id,
            segment: d.seg,
            network: s.network,
            cdn_bytes: s.cdn_bytes,
            pcdn_bytes: s.peer_bytes,
            seconds,
        };
        self.client_event(now, c, kind);
    }

    /// Stops the current download. Received but undelivered peer data is
    /// discarded.
    fn cancel_download(&mut self, c: usize, _now: SimTime) -> Option<(u32, SimTime)> {
        let w = self.clients[c].watch.as_mut()?;
        let d = w.download.take()?;
        if let Job::Pcdn { session, .. } = &d.job {
            harvest(&mut self.log.transport, &session.stats());
            let range = session.range();
            for seq in session.next_to_deliver()..range.end {
                if session.is_received(seq) {
                    self.log.bytes.discarded += w.layout.packet_len(seq);
                }
            }
        }
        Some((d.seg, d.started))
    }

    fn pump(&mut self, c: usize, now: SimTime) {
        let half = self.cfg.links.half_duplex;
        let client = &mut self.clients[c];
        let Some(w) = client.watch.as_mut() else { return };
        let Some(d) = w.download.as_mut() else { return };
        let gen = d.gen;
        let Job::Pcdn { session, timer_at } = &mut d.job else { return };
        for req in session.pump_all(now) {
            let peer = session.path(req.path_id).expect("request on a known path").peer_id;
            let pair = client.pairs[peer.0 as usize];
            let depart = if half { client.medium.send(now, request_frame_bytes(req.packet_seqs.len())) } else { now };
            if client.loss_rng.random::<f64>() < pair.loss {
                continue;
            }
            let ev = Ev::RequestAtPeer { client: c, gen, path: req.path_id.0, peer: peer.0 as usize, video: req.video_id, seqs: req.packet_seqs };
            self.q.schedule(depart + pair.one_way, ev);
        }
        if let Some(dl) = session.next_deadline() {
            if timer_at.is_none_or(|t| t <= now || dl < t) {
                *timer_at = Some(dl);
                self.q.schedule(dl, Ev::SessionTimer { client: c, gen });
            }
        }
    }

    fn session_mut(&mut self, c: usize, gen: u64) -> Option<&mut TransferSession> {
        let d = self.clients[c].watch.as_mut()?.download.as_mut()?;
        match &mut d.job {
            Job::Pcdn { session, .. } if d.gen == gen => Some(session),
            _ => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_packet(&mut self, c: usize, gen: u64, path: u32, seq: u64, len: u64, cached: bool, now: SimTime) {
        self.log.bytes.peer += len;
        let Some(session) = self.session_mut(c, gen) else {
            if self.clients[c].completed.contains(&gen) {
                // a spare copy arriving after the segment finished
                self.log.transport.packets_received += 1;
                self.log.transport.redundant += 1;
            } else {
                self.log.transport.stale_packets += 1;
            }
            self.log.bytes.discarded += len;
            return;
        };
        let ev = session.on_packet(PathId(path), seq, now);
        let complete = session.is_complete();
        let w = self.watch(c);
        let mut delivered = 0;
        if ev.violation || ev.redundant {
            self.log.bytes.discarded += len;
        } else {
            if !ev.delivered.is_empty() {
                delivered = w.layout.bytes_in(&ev.delivered);
            }
            let s = w.record.segments.last_mut().expect("segment record");
            if cached {
                s.memory_packets += 1;
            } else {
                s.disk_packets += 1;
            }
            s.peer_bytes += delivered;
            w.delivered += delivered;
            w.tick_bytes += delivered;
            self.log.bytes.player += delivered;
        }
        if complete {
            self.complete_segment(c, now);
        }
        if delivered > 0 && !self.feed_player(c, now) {
            return;
        }
        if complete {
            self.try_start_next(c, now);
        } else {
            self.pump(c, now);
        }
    }

    fn on_reject(&mut self, c: usize, gen: u64, path: u32, seqs: Vec<u64>, now: SimTime) {
        let Some(session) = self.session_mut(c, gen) else { return };
        session.on_reject(PathId(path), &seqs, now);
        if !session.has_live_path() {
            self.watch(c).pcdn_error = true;
            self.check_fallback(c, now);
        } else {
            self.pump(c, now);
        }
    }

    fn on_timer(&mut self, c: usize, gen: u64, now: SimTime) {
        let Some(d) = self.clients[c].watch.as_mut().and_then(|w| w.download.as_mut()).filter(|d| d.gen == gen) else { return };
        let Job::Pcdn { session, timer_at } = &mut d.job else { return };
        if timer_at.is_some_and(|t| t <= now) {
            *timer_at = None;
        }
        session.poll_timers(now);
        self.pump(c, now);
    }

    fn on_peer_error(&mut self, c: usize, peer: usize, now: SimTime) {
        let pid = PeerId(peer as u32);
        let client = &mut self.clients[c];
        client.pool.drop_peer(pid);
        let Some(w) = client.watch.as_mut() else { return };
        w.connections.retain(|p| p.peer_id != pid);
        if w.connections.is_empty() && w.connected_at.is_some() {
            w.pcdn_error = true;
        }
        if let Some(Download { job: Job::Pcdn { session, .. }, .. }) = w.download.as_mut() {
            let dead: Vec<PathId> = session.paths().iter().filter(|p| p.peer_id == pid && p.alive).map(|p| p.path_id).collect();
            for id in dead {
                session.retire_path(id, now);
            }
            if !session.has_live_path() {
                w.pcdn_error = true;
            }
        }
        if w.pcdn_error {
            self.check_fallback(c, now);
        } else {
            self.pump(c, now);
        }
    }

    fn check_fallback(&mut self, c: usize, now: SimTime) {
        if self.watch(c).switch.mode != SwitchMode::Pcdn {
            return;
        }
        let k = {
            let w = self.watch(c);
            w.download.as_ref().map_or(w.downloaded, |d| d.seg)
        };
        let facts = self.facts(c, k);
        let w = self.watch(c);
        let Some(cause) = evaluate_fallback(&mut w.switch, &facts) else { return };
        self.fall_back(c, cause, now);
    }

    fn fall_back(&mut self, c: usize, cause: FallbackCause, now: SimTime) {
        let w = self.watch(c);
        w.record.fallback = Some(cause);
        let video = w.entry.video_id;
        self.client_event(now, c, EventKind::Mode { video, from: SwitchMode::Pcdn, to: SwitchMode::CdnFallback, cause: Some(cause) });
        if self.failure_pending.remove(&c) {
            let at = self.failure_at.expect("failure happened");
            if let Some(f) = self.log.failure.as_mut() {
                f.fallback_latencies.push(now.since(at).as_secs_f64());
            }
        }
        if !self.watch(c).pcdn_active() {
            return;
        }
        // the rest of the segment comes from the CDN; the mark stays PCDN
        let (seg, started) = self.cancel_download(c, now).expect("download in progress");
        let client = &mut self.clients[c];
        client.gen += 1;
        let gen = client.gen;
        self.watch(c).download = Some(Download { seg, gen, started, job: Job::Cdn });
        self.fetch_cdn(c, now);
    }

    // ---- peers ----

    #[allow(clippy::too_many_arguments)]
    fn on_request(&mut self, c: usize, gen: u64, path: u32, peer: usize, video: VideoId, seqs: Vec<u64>, now: SimTime) {
        let node = &mut self.peers[peer];
        if !node.server.online {
            return;
        }
        let pair = self.clients[c].pairs[peer];
        let Some(entry) = self.catalog.get(video.0 as usize) else { return };
        let layout = PacketLayout::new(entry.size, self.cfg.catalog.chunk_bytes, self.cfg.catalog.payload_bytes);
        let store = &mut node.server.store;
        let cached = store.is_cached(video, now);
        store.touch(video, now);
        let mut rejected = Vec::new();
        let rate = node.server.profile.uplink_bps as f64;
        let loss_rng = &mut self.clients[c].loss_rng;
        for seq in seqs {
            match node.server.store.check_packet(video, seq) {
                Ok((chunk, _)) => {
                    let flipped = node.server.store.video(video).and_then(|v| v.chunks.get(&chunk)).is_some_and(|ch| ch.flipped_bit.is_some());
                    if flipped {
                        self.log.peers.checksum_violations += 1;
                    }
                    let len = layout.packet_len(seq);
                    let wire = len + DATA_HEADER_BYTES;
                    let done = node.uplink.send(now, wire);
                    node.server.add_busy(SimDuration::transmission(wire, rate));
                    if cached {
                        self.log.peers.packets_memory += 1;
                    } else {
                        self.log.peers.packets_disk += 1;
                    }
                    if loss_rng.random::<f64>() >= pair.loss {
                        self.q.schedule(done + pair.one_way, Ev::PacketAtMedium { client: c, gen, path, seq, len, cached });
                    }
                }
                Err(why) => {
                    match why {
                        Unavailable::Corrupt => self.log.peers.rejects_corrupt += 1,
                        _ => self.log.peers.rejects_not_stored += 1,
                    }
                    rejected.push(seq);
                }
            }
        }
        let repair = SimDuration::transmission(self.cfg.catalog.chunk_bytes, self.cfg.cdn.ingest_rate_bps as f64);
        for (v, chunk) in node.server.store.take_corrupt() {
            if node.repairing.insert((v, chunk)) {
                self.q.schedule(now + self.cdn.connect_delay + repair, Ev::Repair { peer, video: v, chunk });
            }
        }
        if !rejected.is_empty() {
            self.q.schedule(now + pair.one_way, Ev::RejectAtClient { client: c, gen, path, seqs: rejected });
        }
    }

    fn on_heartbeat(&mut self, p: usize, now: SimTime) {
        let node = &mut self.peers[p];
        if !node.server.online {
            return;
        }
        let report = node.server.emit_heartbeat(now);
        let next = node.server.next_heartbeat();
        self.q.schedule(now + self.tracker_delay, Ev::HeartbeatAtTracker { report });
        self.q.schedule(next, Ev::Heartbeat { peer: p });
    }

    fn on_heartbeat_at_tracker(&mut self, report: HeartbeatReport, now: SimTime) {
        let p = report.peer_id.0 as usize;
        match self.tracker.on_heartbeat(&report, now) {
            Ok(reply) if !reply.cache_commands.is_empty() => {
                self.q.schedule(now + self.tracker_delay, Ev::HeartbeatReply { peer: p, commands: reply.cache_commands });
            }
            Ok(_) => {}
            // expired while quiet: join again
            Err(_) => self.tracker.register(&report, now),
        }
    }

    fn start_ingest(&mut self, p: usize, now: SimTime) {
        loop {
            let node = &mut self.peers[p];
            if node.ingest.is_some() || !node.server.online {
                return;
            }
            let Some(cmd) = node.queue.pop_front() else { return };
            let v = cmd.video_id;
            let Some(size) = self.catalog.get(v.0 as usize).map(|e| e.size) else { continue };
            if node.server.store.holds_video(v) {
                self.q.schedule(now + self.tracker_delay, Ev::StoreConfirm { peer: p, video: v });
                continue;
            }
            self.next_op += 1;
            let Ok(mut op) = Ingest::plan(&node.server.store, self.next_op, v, size, now) else {
                self.log.peers.ingests_refused += 1;
                continue;
            };
            let victims: Vec<VideoId> = op.victims().collect();
            while op.evict_step(&mut node.server.store) {}
            for x in &victims {
                node.server.note_removed(*x);
            }
            self.log.peers.evicted_videos += victims.len() as u64;
            node.ingest = Some(IngestRun { id: self.next_op, op, source: cmd.source, fresh: true });
            self.system(now, SystemEvent::IngestStart { peer: PeerId(p as u32), video: v, victims });
            self.next_ingest_chunk(p, now);
            return;
        }
    }

    fn next_ingest_chunk(&mut self, p: usize, now: SimTime) {
        let run = self.peers[p].ingest.as_ref().expect("ingest in progress");
        let (v, id, source, fresh) = (run.op.video(), run.id, run.source, run.fresh);
        let Some((seq, size)) = run.op.next_chunk() else { return };
        let from = match source {
            CopySource::Peer(s)
                if (s.0 as usize) != p
                    && self.peers.get(s.0 as usize).is_some_and(|n| n.server.online && n.server.store.holds_chunk(v, seq)) =>
            {
                Some(s.0 as usize)
            }
            _ => None,
        };
        let done = match from {
            Some(s) => {
                let src = &mut self.peers[s];
                let t = src.uplink.send(now, size);
                src.server.add_busy(SimDuration::transmission(size, src.server.profile.uplink_bps as f64));
                t + self.peer_delay
            }
            None => {
                let mut t = now + SimDuration::transmission(size, self.cfg.cdn.ingest_rate_bps as f64);
                if fresh {
                    t += self.cdn.connect_delay;
                }
                t
            }
        };
        if let Some(run) = self.peers[p].ingest.as_mut() {
            run.fresh = false;
        }
        self.q.schedule(done, Ev::IngestStep { peer: p, op: id, seq, size, from_peer: from.is_some() });
    }

    fn on_ingest_step(&mut self, p: usize, op: u64, seq: u32, size: u64, from_peer: bool, now: SimTime) {
        let node = &mut self.peers[p];
        if !node.server.online || node.ingest.as_ref().is_none_or(|r| r.id != op) {
            return;
        }
        if from_peer {
            self.log.bytes.ingest_peer += size;
        } else {
            self.log.bytes.ingest_cdn += size;
        }
        let run = node.ingest.as_mut().expect("checked");
        let v = run.op.video();
        let written = run.op.write_verified(&mut node.server.store, seq, size, content_checksum(v, seq, size));
        if node.server.store.used() > node.server.store.capacity {
            self.log.peers.capacity_violations += 1;
        }
        if written.is_err() {
            self.abort_ingest(p, now);
            self.start_ingest(p, now);
            return;
        }
        if run.op.next_chunk().is_some() {
            self.next_ingest_chunk(p, now);
            return;
        }
        let mut run = node.ingest.take().expect("checked");
        if run.op.commit().is_err() {
            self.log.peers.ingests_rolled_back += 1;
            let _ = run.op.rollback(&mut node.server.store);
        } else {
            self.log.peers.ingests_committed += 1;
            self.q.schedule(now + self.tracker_delay, Ev::StoreConfirm { peer: p, video: v });
            self.system(now, SystemEvent::IngestDone { peer: PeerId(p as u32), video: v });
        }
        self.start_ingest(p, now);
    }

    fn abort_ingest(&mut self, p: usize, now: SimTime) {
        let node = &mut self.peers[p];
        let Some(run) = node.ingest.take() else { return };
        let v = run.op.video();
        // restores the victims as well, so the tracker's view stays right
        // once they are re-announced
        let _ = run.op.rollback(&mut node.server.store);
        self.log.peers.ingests_rolled_back += 1;
        self.system(now, SystemEvent::IngestRolledBack { peer: PeerId(p as u32), video: v });
    }

    fn on_cycle_end(&mut self, now: SimTime) {
        let decisions = self.tracker.end_cycle(now);
        self.system(now, SystemEvent::CycleEnd { decisions: decisions.len() });
        for d in decisions {
            self.system(now, SystemEvent::Distribute { video: d.video_id, peer: d.target_peer });
        }
        for node in &mut self.peers {
            node.server.store.roll_cycle();
        }
        self.q.schedule(now + SimDuration::from_secs_f64(self.cfg.cycle.length_s), Ev::CycleEnd);
    }

    fn on_mass_failure(&mut self, now: SimTime) {
        let Some(f) = self.cfg.peers.failure else { return };
        let mut order: Vec<usize> = (0..self.peers.len()).collect();
        order.shuffle(&mut self.faults);
        let n = ((self.peers.len() as f64) * f.fraction).round() as usize;
        let failed: BTreeSet<usize> = order.into_iter().take(n).collect();
        for &p in &failed {
            self.peers[p].server.online = false;
            self.abort_ingest(p, now);
            self.system(now, SystemEvent::PeerOffline { peer: PeerId(p as u32) });
        }
        let mut active = 0;
        for c in 0..self.clients.len() {
            let client = &self.clients[c];
            let in_pcdn = client.watch.as_ref().is_some_and(|w| w.switch.mode == SwitchMode::Pcdn);
            let mut hit = false;
            for &p in &failed {
                let pid = PeerId(p as u32);
                let held = client.pool.reusable(pid, now).is_some()
                    || client.watch.as_ref().is_some_and(|w| w.connections.iter().any(|x| x.peer_id == pid));
                if held {
                    hit = true;
                    self.q.schedule(now + client.pairs[p].one_way, Ev::PeerError { client: c, peer: p });
                }
            }
            if in_pcdn && hit {
                active += 1;
                self.failure_pending.insert(c);
            }
        }
        self.log.failure = Some(FailureRecord { at: now.as_secs_f64(), peers_failed: n as u32, active_clients: active, fallback_latencies: Vec::new() });
    }
}

fn player_target(c: &Client) -> Option<f64> {
    c.watch.as_ref().and_then(|w| w.player.watch_target)
}
