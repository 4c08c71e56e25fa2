mod common;

use std::path::PathBuf;

use pcdn_core::scheduler::SchedulerPolicy;
use pcdn_core::simnet::{run, run_transfer, HarnessConfig, HarnessPath, Medium, ScenarioConfig};
use pcdn_core::transport::TransferConfig;
use pcdn_core::SimDuration;

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))).unwrap()
}

// 28-byte data header on a 1200-byte payload
const PAYLOAD_SHARE: f64 = 1200.0 / 1228.0;

#[test]
fn one_fat_clean_path_runs_at_link_capacity() {
    let cfg = HarnessConfig::new(vec![HarnessPath::new(10, 50_000_000, 0.0)], 40_000_000, TransferConfig::default(), 5);
    let r = run_transfer(&cfg).unwrap();
    assert!(common::session_fault(&r).is_none());
    let ceiling = 50e6 * PAYLOAD_SHARE;
    assert!(r.goodput_bps <= ceiling * 1.0001 && r.goodput_bps >= 0.97 * ceiling, "{} of {ceiling}", r.goodput_bps);
}

#[test]
fn bundling_wins_on_a_half_duplex_medium() {
    let goodput = |bundle_size| {
        let paths = vec![HarnessPath::new(20, 8_000_000, 0.0), HarnessPath::new(40, 8_000_000, 0.0), HarnessPath::new(60, 8_000_000, 0.0)];
        let mut cfg = HarnessConfig::new(paths, 4_000_000, TransferConfig { bundle_size, ..Default::default() }, 7);
        cfg.medium = Some(Medium { rate_bps: 20_000_000, frame_overhead: SimDuration::from_micros(300), half_duplex: true });
        let r = run_transfer(&cfg).unwrap();
        assert!(common::session_fault(&r).is_none());
        r.goodput_bps
    };
    let (one, sixteen) = (goodput(1), goodput(16));
    assert!(sixteen > one, "bundle 16 {sixteen} vs bundle 1 {one}");
}

#[test]
fn every_policy_reassembles_the_three_path_transfer() {
    for policy in SchedulerPolicy::ALL {
        let r = pcdn_core::simnet::three_path_transfer(policy, 4).unwrap();
        assert!(common::session_fault(&r).is_none(), "{}", policy.name());
    }
}

#[test]
fn bytes_are_conserved_in_whole_runs() {
    for name in ["default", "lossy_high", "mass_failure"] {
        let r = run(&scenario(name)).unwrap().report;
        assert_eq!(r.conservation_error, 0, "{name}");
        assert_eq!(r.capacity_violations, 0, "{name}");
        assert_eq!(r.prefetch_violations, 0, "{name}");
        assert_eq!(r.unexplained_jumps, 0, "{name}");
        assert_eq!(r.checksum_violations, 0, "{name}");
    }
}

#[test]
fn shipped_default_scenario_matches_the_builtin() {
    assert_eq!(scenario("default").to_toml(), ScenarioConfig::default().to_toml());
}
