//! Deterministic discrete-event simulation of clients, peers, the tracker
//! and the CDN.

pub mod cdn;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod harness;
pub mod link;
pub mod metrics;
pub mod nat;
pub mod rng;
pub mod workload;
pub mod world;

pub use cdn::CdnModel;
pub use config::{ScenarioConfig, SegmentLength};
pub use engine::EventQueue;
pub use harness::{run_transfer, HarnessConfig, HarnessPath, HarnessReport, Medium};
pub use link::{Fifo, LinkModel};
pub use nat::NatModel;
pub use rng::{RngFactory, Stream};
pub use workload::{RequestTrace, WorkloadSpec};
pub use metrics::{compute_metrics, csv_header, csv_row, MetricsReport, RunLog};
pub use world::{run, RunOutput};
pub use experiments::{compare_schedulers, par_map, repetitions, sweep_segment, three_path_config, three_path_transfer, SchedulerRow, SweepRun, THREE_PATH_REORDER_WINDOW};
