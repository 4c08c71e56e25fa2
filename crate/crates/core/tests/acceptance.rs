//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use pcdn_core::scheduler::SchedulerPolicy;
use pcdn_core::simnet::{
    run, run_transfer, sweep_segment, three_path_config, HarnessConfig, RunOutput, ScenarioConfig, SegmentLength, THREE_PATH_REORDER_WINDOW,
};
use pcdn_core::transport::TransferConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Every run made along the way, kept so it can be repeated at the end.
#[derive(Default)]
struct Ledger {
    worlds: Vec<(String, ScenarioConfig, String)>,
    transfers: Vec<(String, HarnessConfig, String)>,
    checksum_violations: u64,
}

impl Ledger {
    fn world(&mut self, label: impl Into<String>, cfg: &ScenarioConfig) -> RunOutput {
        let out = run(cfg).unwrap_or_else(|e| panic!("run {}: {e}", cfg.name));
        self.checksum_violations += out.report.checksum_violations;
        self.worlds.push((label.into(), cfg.clone(), out.report.to_json()));
        out
    }

    fn transfer(&mut self, label: impl Into<String>, cfg: &HarnessConfig, json: String) {
        self.transfers.push((label.into(), cfg.clone(), json));
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn transport_reliability(ledger: &mut Ledger) -> Verdict {
    let mut faults = Vec::new();
    let mut levels = [false; 4];
    for i in 0..200 {
        let cfg = common::reliability_session(i);
        for p in &cfg.paths {
            levels[common::LOSS_LEVELS.iter().position(|&l| l == p.loss).unwrap()] = true;
        }
        match run_transfer(&cfg) {
            Ok(r) => {
                if !r.reassembly_exact {
                    ledger.checksum_violations += 1;
                }
                if let Some(f) = common::session_fault(&r) {
                    faults.push(format!("session {i}: {f}"));
                }
                if i % 20 == 0 {
                    ledger.transfer(format!("session {i}"), &cfg, serde_json::to_string(&r).unwrap());
                }
            }
            Err(e) => faults.push(format!("session {i}: {e}")),
        }
    }
    let covered = levels.iter().all(|&b| b);
    let detail = match faults.first() {
        Some(f) => format!("{} faulty sessions, first {f}", faults.len()),
        None => "200 sessions, 1-4 paths, loss 0/5/10/20 %, zero violations".into(),
    };
    verdict(faults.is_empty() && covered, detail)
}

fn allocation_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let inputs = common::random_inputs(&mut rng);
        if let Err(e) = inputs.validate().map_err(|e| e.to_string()).and_then(|_| common::check_formulas(&inputs)) {
            return verdict(false, format!("formula input {i}: {e}"));
        }
    }
    let n = 2000;
    for i in 0..n {
        let (instances, targets) = common::random_contention(&mut rng);
        if let Err(e) = common::check_greedy(&instances, &targets) {
            return verdict(false, format!("contention instance {i}: {e}"));
        }
    }
    verdict(true, format!("1000 inputs bit-exact, {n} contention instances at the lexicographic optimum"))
}

fn scheduler_gains(ledger: &mut Ledger) -> Verdict {
    let mut transfer = |policy: SchedulerPolicy| {
        let t = TransferConfig { policy, reorder_window: Some(THREE_PATH_REORDER_WINDOW), ..Default::default() };
        let cfg = three_path_config(t, 1);
        let r = run_transfer(&cfg).unwrap();
        ledger.transfer(format!("three-path {}", policy.name()), &cfg, serde_json::to_string(&r).unwrap());
        r
    };
    let byte = transfer(SchedulerPolicy::BYTESCHEDULER);
    let minrtt = transfer(SchedulerPolicy::MINRTT);
    let ratio = byte.completion.as_secs_f64() / minrtt.completion.as_secs_f64();
    let red = byte.redundancy();
    verdict(
        byte.completed && minrtt.completed && ratio <= 0.9 && red <= 0.02,
        format!(
            "bytescheduler {:.3} s vs minrtt {:.3} s (ratio {ratio:.3}, limit 0.9), redundancy {:.2} % (limit 2 %)",
            byte.completion.as_secs_f64(),
            minrtt.completion.as_secs_f64(),
            red * 100.0
        ),
    )
}

fn jump_reduction(ledger: &mut Ledger) -> Verdict {
    let (mut byte, mut rr) = (0, 0);
    let mut parts = Vec::new();
    for name in ["lossy_low", "lossy_mid", "lossy_high"] {
        let mut counts = [0; 2];
        for (k, policy) in [SchedulerPolicy::BYTESCHEDULER, SchedulerPolicy::ROUNDROBIN].into_iter().enumerate() {
            let mut cfg = scenario(name);
            cfg.scheduler.policy = policy;
            counts[k] = ledger.world(format!("{name} {}", policy.name()), &cfg).report.jumps;
        }
        parts.push(format!("{name} {}/{}", counts[0], counts[1]));
        byte += counts[0];
        rr += counts[1];
    }
    let pass = rr > 0 && byte as f64 <= 0.8 * rr as f64;
    verdict(pass, format!("jumps bytescheduler {byte} vs roundrobin {rr} (ratio {:.3}, limit 0.8; {})", byte as f64 / rr.max(1) as f64, parts.join(", ")))
}

fn segment_sweep(ledger: &mut Ledger) -> Verdict {
    let cfg = scenario("abandon");
    let sizes = [SegmentLength::Seconds(5.0), SegmentLength::Seconds(10.0), SegmentLength::Seconds(15.0), SegmentLength::FULL];
    let runs = sweep_segment(&cfg, &sizes).unwrap();
    let mut waste = Vec::new();
    let mut rebuf = Vec::new();
    for r in &runs {
        let mut c = cfg.clone();
        c.catalog.segment_s = r.segment;
        ledger.checksum_violations += r.output.report.checksum_violations;
        ledger.worlds.push((format!("abandon {}", r.output.report.segment), c, r.output.report.to_json()));
        waste.push(r.output.report.waste_bytes);
        rebuf.push(r.output.report.rebuffer_events);
    }
    let increasing = waste.windows(2).all(|w| w[0] < w[1]);
    let non_increasing = rebuf.windows(2).all(|w| w[0] >= w[1]);
    verdict(increasing && non_increasing, format!("5s/10s/15s/full waste {waste:?} bytes, rebuffers {rebuf:?}"))
}

fn hybrid_behavior(ledger: &mut Ledger) -> Verdict {
    let hybrid_cfg = scenario("default");
    let hybrid = ledger.world("default hybrid", &hybrid_cfg);
    let cdn_cfg = ScenarioConfig { hybrid: false, ..hybrid_cfg.clone() };
    let cdn = ledger.world("default cdn-only", &cdn_cfg);

    let key = |o: &RunOutput| o.log.videos.iter().map(|v| ((v.client, v.ordinal), v.startup_latency)).collect::<std::collections::BTreeMap<_, _>>();
    let (h, c) = (key(&hybrid), key(&cdn));
    let started = h.values().filter(|s| s.is_some()).count();
    let mismatches = h.iter().filter(|(k, s)| c.get(k) != Some(s)).count() + c.keys().filter(|k| !h.contains_key(k)).count();
    let startup_ok = mismatches == 0 && started > 0;

    let share = hybrid.report.peer_share;
    let share_ok = share >= 0.6;

    let fail_cfg = scenario("mass_failure");
    let tick = fail_cfg.thresholds.eval_tick_ms / 1000.0;
    let f = ledger.world("mass failure", &fail_cfg).report;
    let failure_ok = f.failure_active_clients > 0
        && f.failure_fallbacks == f.failure_active_clients
        && f.failure_max_latency_s <= tick
        && f.playback_failures == 0;

    verdict(
        startup_ok && share_ok && failure_ok,
        format!(
            "startup identical on {started} videos ({mismatches} mismatches, mean {:.4} s vs {:.4} s); peer share {share:.3} (floor 0.6); \
             mass failure {}/{} clients fell back, max {:.3} s (tick {tick} s), {} playback failures",
            hybrid.report.startup_mean_s, cdn.report.startup_mean_s, f.failure_fallbacks, f.failure_active_clients, f.failure_max_latency_s, f.playback_failures
        ),
    )
}

fn cache_placement(ledger: &mut Ledger) -> Verdict {
    let (mut pop, mut uni) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let cfg = ScenarioConfig { seed, ..scenario("popularity") };
        let p = ledger.world(format!("popularity seed {seed}"), &cfg).report;
        let mut ucfg = ScenarioConfig { seed, ..scenario("uniform_budget") };
        ucfg.peers.copy_budget = p.distributed_copies;
        let u = ledger.world(format!("uniform seed {seed}"), &ucfg).report;
        pop.push(p.cache_hit_ratio);
        uni.push(u.cache_hit_ratio);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pm, um) = (mean(&pop), mean(&uni));
    verdict(pm >= 1.2 * um, format!("mean hit ratio over seeds 1-5: popularity {pm:.4} vs uniform {um:.4} (ratio {:.2}, floor 1.2)", pm / um))
}

fn journal_safety(ledger: &mut Ledger) -> Verdict {
    let mut points = 0;
    for case in common::crash_cases() {
        match common::crash_sweep(&case) {
            Ok(n) => points += n,
            Err(e) => return verdict(false, format!("{case:?}: {e}")),
        }
    }
    // a run with corrupted peer chunks must reject them rather than deliver them
    let mut cfg = scenario("default");
    cfg.peers.corrupt_chunks = 20;
    let r = ledger.world("default corrupt", &cfg).report;
    let violations = ledger.checksum_violations;
    verdict(
        violations == 0 && r.corrupt_rejects > 0,
        format!("{points} crash points all pre or post; {} corrupt packets rejected; {violations} checksum violations over {} runs", r.corrupt_rejects, ledger.worlds.len() + 200),
    )
}

fn determinism(ledger: &Ledger) -> Verdict {
    let mut differ = Vec::new();
    for (label, cfg, json) in &ledger.worlds {
        if &run(cfg).unwrap().report.to_json() != json {
            differ.push(label.clone());
        }
    }
    for (label, cfg, json) in &ledger.transfers {
        if &serde_json::to_string(&run_transfer(cfg).unwrap()).unwrap() != json {
            differ.push(label.clone());
        }
    }
    let n = ledger.worlds.len() + ledger.transfers.len();
    verdict(differ.is_empty(), if differ.is_empty() { format!("{n} runs repeated byte-identical") } else { format!("differs: {}", differ.join(", ")) })
}

fn main() -> ExitCode {
    let mut ledger = Ledger::default();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        println!("{} {n} {name}: {} [{:.1} s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "transport reliability", &mut || transport_reliability(&mut ledger));
    report(2, "allocation oracle", &mut allocation_oracle);
    report(3, "scheduler gains", &mut || scheduler_gains(&mut ledger));
    report(4, "jump-rate reduction", &mut || jump_reduction(&mut ledger));
    report(5, "segment-size sweep", &mut || segment_sweep(&mut ledger));
    report(6, "hybrid behavior", &mut || hybrid_behavior(&mut ledger));
    report(7, "cache placement", &mut || cache_placement(&mut ledger));
    report(8, "journal safety", &mut || journal_safety(&mut ledger));
    report(9, "determinism", &mut || determinism(&ledger));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
