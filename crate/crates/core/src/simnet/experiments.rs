//! Multi-run experiments: segment-size sweeps, scheduler comparisons and
//! seed repetitions. Runs are independent, so they go in parallel; results
//! come back in input order regardless of which finished first.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scheduler::SchedulerPolicy;
use crate::transport::TransferConfig;

use super::config::{ScenarioConfig, SegmentLength};
use super::harness::{run_transfer, HarnessConfig, HarnessPath, HarnessReport};
use super::world::{run, RunOutput};

/// Maps `f` over `items` on all cores, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

/// Runs `reps` copies of a scenario on seeds `seed, seed+1, ...`, sorted by
/// seed.
pub fn repetitions(cfg: &ScenarioConfig, reps: u32) -> Result<Vec<RunOutput>> {
    let seeds: Vec<u64> = (0..reps.max(1) as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    par_map(&seeds, |&seed| run(&ScenarioConfig { seed, ..cfg.clone() })).into_iter().collect()
}

fn segment_order(a: &SegmentLength, b: &SegmentLength) -> Ordering {
    match (a, b) {
        (SegmentLength::Seconds(x), SegmentLength::Seconds(y)) => x.total_cmp(y),
        (SegmentLength::Seconds(_), SegmentLength::Full(_)) => Ordering::Less,
        (SegmentLength::Full(_), SegmentLength::Seconds(_)) => Ordering::Greater,
        _ => Ordering::Equal,
    }
}

pub struct SweepRun {
    pub segment: SegmentLength,
    pub output: RunOutput,
}

/// One run per segment size on the same seed, shortest first and
/// whole-video preload last.
pub fn sweep_segment(cfg: &ScenarioConfig, sizes: &[SegmentLength]) -> Result<Vec<SweepRun>> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes", "at least one segment size is required"));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_by(segment_order);
    sizes.dedup_by(|a, b| segment_order(a, b) == Ordering::Equal);
    let outputs = par_map(&sizes, |s| {
        let mut c = cfg.clone();
        c.catalog.segment_s = *s;
        run(&c)
    });
    sizes.into_iter().zip(outputs).map(|(segment, o)| Ok(SweepRun { segment, output: o? })).collect()
}

/// The heterogeneous three-path transfer: RTT 20/60/120 ms at 8/4/2 Mbps.
pub fn three_path_config(transfer: TransferConfig, seed: u64) -> HarnessConfig {
    let paths = vec![HarnessPath::new(20, 8_000_000, 0.0), HarnessPath::new(60, 4_000_000, 0.0), HarnessPath::new(120, 2_000_000, 0.0)];
    HarnessConfig::new(paths, 10_000_000, transfer, seed)
}

/// Reorder buffer used for the three-path comparison, in packets.
pub const THREE_PATH_REORDER_WINDOW: u64 = 128;

pub fn three_path_transfer(policy: SchedulerPolicy, seed: u64) -> Result<HarnessReport> {
    let transfer = TransferConfig { policy, reorder_window: Some(THREE_PATH_REORDER_WINDOW), ..Default::default() };
    run_transfer(&three_path_config(transfer, seed))
}

#[derive(Debug, Clone, Serialize)]
pub struct SchedulerRow {
    pub variant: String,
    /// Three-path transfer completion, seconds.
    pub completion_s: f64,
    pub transfer_redundancy: f64,
    /// Completion relative to the baseline, minus one. Negative is faster.
    pub delta_vs_baseline: f64,
    #[serde(skip)]
    pub output: RunOutput,
}

/// Every policy on the same seed and workload, plus the three-path
/// transfer. The baseline is added when missing.
pub fn compare_schedulers(cfg: &ScenarioConfig, policies: &[SchedulerPolicy], baseline: SchedulerPolicy) -> Result<Vec<SchedulerRow>> {
    let mut policies = policies.to_vec();
    if !policies.contains(&baseline) {
        policies.push(baseline);
    }
    let results = par_map(&policies, |&p| -> Result<(RunOutput, HarnessReport)> {
        let mut c = cfg.clone();
        c.scheduler.policy = p;
        Ok((run(&c)?, three_path_transfer(p, cfg.seed)?))
    });
    let mut rows = Vec::new();
    for (p, r) in policies.iter().zip(results) {
        let (output, transfer) = r?;
        rows.push(SchedulerRow {
            variant: p.name().to_string(),
            completion_s: transfer.completion.as_secs_f64(),
            transfer_redundancy: transfer.redundancy(),
            delta_vs_baseline: 0.0,
            output,
        });
    }
    let base = rows[policies.iter().position(|p| *p == baseline).expect("baseline present")].completion_s;
    for r in &mut rows {
        r.delta_vs_baseline = if base > 0.0 { r.completion_s / base - 1.0 } else { 0.0 };
    }
    Ok(rows)
}
