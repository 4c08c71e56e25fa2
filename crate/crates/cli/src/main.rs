//! `pcdn`: runs simulator scenarios and experiments, and evaluates bandwidth
//! allocation inputs.
//!
//! Exit codes: 0 on success, 2 when arguments, a config or an input file are
//! invalid, 3 when a run fails or its output cannot be written.

mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcdn_core::scheduler::SchedulerPolicy;
use pcdn_core::simnet::{compare_schedulers, repetitions, sweep_segment, MetricsReport, ScenarioConfig, SegmentLength};
use pcdn_core::tracker::allocation::{allocate, AllocationInputs, AllocationReport};
use serde::Serialize;

use output::{csv_table, write_run, Staged};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<pcdn_core::Error> for CliError {
    fn from(e: pcdn_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pcdn", version, about = "Hybrid CDN/PCDN delivery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario, once per seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Repetitions on seeds seed, seed+1, ...
        #[arg(long, env = "PCDN_REPS", default_value_t = 1)]
        reps: u32,
    },
    /// Run the scenario once per segment length on the same seed.
    SweepSegment {
        #[command(flatten)]
        common: Common,
        /// Segment lengths in seconds, or "full" for whole-video preload.
        #[arg(long, env = "PCDN_SIZES", value_delimiter = ',', default_value = "5,10,15,full", value_parser = parse_segment)]
        sizes: Vec<SegmentLength>,
    },
    /// Run the scenario and the three-path transfer under each scheduler.
    CompareSchedulers {
        #[command(flatten)]
        common: Common,
        /// Policies to compare.
        #[arg(long, env = "PCDN_POLICIES", value_delimiter = ',', default_value = "bytescheduler,bytescheduler-nr,minrtt,roundrobin")]
        policies: Vec<SchedulerPolicy>,
        /// Policy the deltas are relative to.
        #[arg(long, env = "PCDN_BASELINE", default_value = "minrtt")]
        baseline: SchedulerPolicy,
    },
    /// Evaluate bandwidth allocation inputs and print the plan.
    Allocate {
        /// Allocation inputs (TOML).
        #[arg(long, env = "PCDN_INPUTS")]
        inputs: PathBuf,
        /// Also write allocation.json and an inputs snapshot here.
        #[arg(long, env = "PCDN_OUT")]
        out: Option<PathBuf>,
        /// Print JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Check a scenario config or allocation inputs without running anything.
    Validate {
        #[arg(long, env = "PCDN_CONFIG", required_unless_present = "inputs")]
        config: Option<PathBuf>,
        #[arg(long, env = "PCDN_INPUTS")]
        inputs: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML). Omit for the built-in default scenario.
    #[arg(long, env = "PCDN_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long, env = "PCDN_OUT")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "PCDN_SEED")]
    seed: Option<u64>,
    /// Overrides the config scheduler.
    #[arg(long, env = "PCDN_SCHEDULER")]
    scheduler: Option<SchedulerPolicy>,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => load_scenario(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = self.scheduler {
            cfg.scheduler.policy = p;
        }
        Ok(cfg)
    }
}

fn parse_segment(s: &str) -> Result<SegmentLength, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("full") {
        return Ok(SegmentLength::FULL);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(SegmentLength::Seconds(v)),
        _ => Err(format!("expected a positive number of seconds or \"full\", got {s:?}")),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    if !path.is_file() {
        return Err(CliError::Validation(format!("{}: no such config file", path.display())));
    }
    ScenarioConfig::load(path).map_err(|e| match e {
        pcdn_core::Error::Io(io) => CliError::Validation(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

fn load_inputs(path: &Path) -> Result<AllocationInputs, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let inputs = AllocationInputs::from_toml(&text)?;
    inputs.validate()?;
    Ok(inputs)
}

/// A summary CSV row: experiment columns followed by the run's metrics.
#[derive(Serialize)]
struct Row<'a> {
    experiment: &'static str,
    variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transfer_redundancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_vs_baseline: Option<f64>,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

impl<'a> Row<'a> {
    fn new(experiment: &'static str, variant: String, report: &'a MetricsReport) -> Self {
        Self { experiment, variant, completion_s: None, transfer_redundancy: None, delta_vs_baseline: None, report }
    }
}

fn cmd_run(common: &Common, reps: u32) -> Result<String, CliError> {
    if reps == 0 {
        return Err(CliError::Validation("--reps must be at least 1".into()));
    }
    let cfg = common.scenario()?;
    let staged = Staged::new(&common.out)?;
    let outputs = repetitions(&cfg, reps)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    writeln!(text, "{:>8} {:>7} {:>9} {:>10} {:>10} {:>9} {:>12}", "seed", "videos", "jump_rate", "rebuffers", "peer_share", "startup_s", "waste_bytes").unwrap();
    for o in &outputs {
        let run_cfg = ScenarioConfig { seed: o.report.seed, ..cfg.clone() };
        let row = Row::new("run", o.report.seed.to_string(), &o.report);
        let rel = if reps == 1 { PathBuf::new() } else { PathBuf::from(format!("seed-{}", o.report.seed)) };
        write_run(&staged, &rel, &run_cfg, o, &row)?;
        let r = &o.report;
        writeln!(text, "{:>8} {:>7} {:>9.4} {:>10} {:>10.4} {:>9.4} {:>12}", r.seed, r.videos, r.jump_rate, r.rebuffer_events, r.peer_share, r.startup_mean_s, r.waste_bytes).unwrap();
        rows.push(row);
    }
    if reps > 1 {
        staged.write("summary.csv", csv_table(&rows))?;
    }
    let dir = staged.commit()?;
    writeln!(text, "wrote {}", dir.display()).unwrap();
    Ok(text)
}

fn cmd_sweep(common: &Common, sizes: &[SegmentLength]) -> Result<String, CliError> {
    let cfg = common.scenario()?;
    let staged = Staged::new(&common.out)?;
    let runs = sweep_segment(&cfg, sizes)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    writeln!(text, "{:>8} {:>12} {:>10} {:>13}", "segment", "waste_bytes", "rebuffers", "rebuffer_s").unwrap();
    for run in &runs {
        let label = run.segment.label();
        let mut run_cfg = cfg.clone();
        run_cfg.catalog.segment_s = run.segment;
        let row = Row::new("sweep-segment", label.clone(), &run.output.report);
        write_run(&staged, Path::new(&format!("segment-{label}")), &run_cfg, &run.output, &row)?;
        let rebuffer_s: f64 = run.output.log.videos.iter().map(|v| v.rebuffer_time).sum();
        let r = &run.output.report;
        writeln!(text, "{:>8} {:>12} {:>10} {:>13.3}", label, r.waste_bytes, r.rebuffer_events, rebuffer_s).unwrap();
        rows.push(row);
    }
    staged.write("summary.csv", csv_table(&rows))?;
    let dir = staged.commit()?;
    writeln!(text, "wrote {}", dir.display()).unwrap();
    Ok(text)
}

fn cmd_compare(common: &Common, policies: &[SchedulerPolicy], baseline: SchedulerPolicy) -> Result<String, CliError> {
    if policies.is_empty() {
        return Err(CliError::Validation("--policies must name at least one scheduler".into()));
    }
    let cfg = common.scenario()?;
    let staged = Staged::new(&common.out)?;
    let table = compare_schedulers(&cfg, policies, baseline)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    writeln!(text, "{:>17} {:>13} {:>11} {:>9} {:>6} {:>10}", "policy", "completion_s", "redundancy", "delta", "jumps", "jump_rate").unwrap();
    for t in &table {
        let mut run_cfg = cfg.clone();
        run_cfg.scheduler.policy = t.variant.parse()?;
        let row = Row {
            completion_s: Some(t.completion_s),
            transfer_redundancy: Some(t.transfer_redundancy),
            delta_vs_baseline: Some(t.delta_vs_baseline),
            ..Row::new("compare-schedulers", t.variant.clone(), &t.output.report)
        };
        write_run(&staged, Path::new(&t.variant), &run_cfg, &t.output, &row)?;
        let r = &t.output.report;
        writeln!(
            text,
            "{:>17} {:>13.3} {:>11.4} {:>+8.1}% {:>6} {:>10.4}",
            t.variant,
            t.completion_s,
            t.transfer_redundancy,
            t.delta_vs_baseline * 100.0,
            r.jumps,
            r.jump_rate
        )
        .unwrap();
        rows.push(row);
    }
    staged.write("summary.csv", csv_table(&rows))?;
    let dir = staged.commit()?;
    writeln!(text, "baseline {baseline}; wrote {}", dir.display()).unwrap();
    Ok(text)
}

fn allocation_text(r: &AllocationReport) -> String {
    let mut s = String::new();
    writeln!(s, "totalbw_provide_rs").unwrap();
    for b in &r.business_shares {
        writeln!(s, "  region={} business={} need={} provide={}", b.region, b.business, b.need, b.total_provide).unwrap();
    }
    writeln!(s, "bw_provide_rvs").unwrap();
    for b in &r.vendors.by_business {
        writeln!(s, "  region={} vendor={} business={} provide={}", b.region, b.vendor, b.business, b.provide).unwrap();
    }
    writeln!(s, "Expbw_rvd").unwrap();
    for d in &r.vendors.by_domain {
        writeln!(s, "  region={} vendor={} domain={} provide={} expected={}", d.region, d.vendor, d.domain, d.provide, d.expected).unwrap();
    }
    writeln!(s, "plan").unwrap();
    for g in &r.plan.grants {
        writeln!(s, "  grant instance={} region={} vendor={} domain={} amount={}", g.instance, g.region, g.vendor, g.domain, g.amount).unwrap();
    }
    for f in &r.plan.shortfalls {
        writeln!(s, "  shortfall region={} vendor={} domain={} missing={}", f.region, f.vendor, f.domain, f.missing).unwrap();
    }
    s
}

fn cmd_allocate(inputs: &Path, out: Option<&Path>, json: bool) -> Result<String, CliError> {
    let parsed = load_inputs(inputs)?;
    let report = allocate(&parsed)?;
    let report_json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    let mut text = if json { report_json.clone() } else { allocation_text(&report) };
    if let Some(out) = out {
        let staged = Staged::new(out)?;
        staged.write("allocation.json", &report_json)?;
        staged.write("inputs.toml", toml::to_string_pretty(&parsed).map_err(|e| CliError::Runtime(e.to_string()))?)?;
        let dir = staged.commit()?;
        if !json {
            writeln!(text, "wrote {}", dir.display()).unwrap();
        }
    }
    Ok(text)
}

fn cmd_validate(config: Option<&Path>, inputs: Option<&Path>) -> Result<String, CliError> {
    let mut text = String::new();
    if let Some(p) = config {
        load_scenario(p)?;
        writeln!(text, "ok {}", p.display()).unwrap();
    }
    if let Some(p) = inputs {
        load_inputs(p)?;
        writeln!(text, "ok {}", p.display()).unwrap();
    }
    Ok(text)
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run { common, reps } => cmd_run(&common, reps),
        Command::SweepSegment { common, sizes } => cmd_sweep(&common, &sizes),
        Command::CompareSchedulers { common, policies, baseline } => cmd_compare(&common, &policies, baseline),
        Command::Allocate { inputs, out, json } => cmd_allocate(&inputs, out.as_deref(), json),
        Command::Validate { config, inputs } => cmd_validate(config.as_deref(), inputs.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
