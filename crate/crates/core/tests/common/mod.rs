//! Independent oracles shared by the integration tests and the acceptance
//! target.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use pcdn_core::model::{ContentSource, VideoId};
use pcdn_core::peer::{ingest_video, Ingest, OriginFetcher, Recovery, StoreSnapshot};
use pcdn_core::peer::ChunkStore;
use pcdn_core::tracker::allocation::{
    decompose_requirements, greedy_allocate, vendor_decomposition, AllocationInputs, BusinessInput, DomainInput, DomainTarget,
    RegionInput, ResourceInstance, VendorInput,
};
use pcdn_core::scheduler::SchedulerPolicy;
use pcdn_core::simnet::{HarnessConfig, HarnessPath, HarnessReport, Medium};
use pcdn_core::transport::TransferConfig;
use pcdn_core::{SimDuration, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- allocation

/// Random but valid allocation inputs. Vendor capacities are drawn first and
/// each region's capacity is their sum, so the consistency check holds.
pub fn random_inputs(rng: &mut impl Rng) -> AllocationInputs {
    let regions: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("r{i}")).collect();
    let domains: Vec<DomainInput> = (0..rng.random_range(1..=4))
        .map(|i| DomainInput { name: format!("d{i}"), priority: rng.random_range(0..5), expected_bw: rng.random_range(0.0..500.0) })
        .collect();
    let mut vendors: Vec<VendorInput> = (0..rng.random_range(1..=3))
        .map(|i| VendorInput { name: format!("v{i}"), capacity: BTreeMap::new(), provision: None })
        .collect();
    for r in &regions {
        for v in &mut vendors {
            // some vendors are absent from some regions
            if rng.random_bool(0.8) {
                v.capacity.insert(r.clone(), rng.random_range(0.0..300.0));
            }
        }
    }
    for v in &mut vendors {
        if rng.random_bool(0.3) {
            v.provision = Some(rng.random_range(1.0..1000.0));
        }
    }
    let region_inputs = regions
        .iter()
        .map(|r| RegionInput { name: r.clone(), capacity: vendors.iter().filter_map(|v| v.capacity.get(r)).sum() })
        .collect();
    let businesses = (0..rng.random_range(1..=5))
        .map(|i| BusinessInput {
            name: format!("b{i}"),
            domain: domains[rng.random_range(0..domains.len())].name.clone(),
            peak: regions.iter().filter_map(|r| rng.random_bool(0.85).then(|| (r.clone(), rng.random_range(0.0..200.0)))).collect(),
            fluctuation: rng.random_range(1.0..1.5),
        })
        .collect();
    AllocationInputs { regions: region_inputs, vendors, businesses, domains, instances: Vec::new() }
}

/// Re-evaluates every decomposition formula from the raw inputs and
/// compares with the library, bit for bit.
pub fn check_formulas(inputs: &AllocationInputs) -> Result<(), String> {
    let need = |r: &str, b: &BusinessInput| b.peak.get(r).copied().unwrap_or(0.0) * b.fluctuation;
    let cap_r: BTreeMap<&str, f64> = inputs.regions.iter().map(|r| (r.name.as_str(), r.capacity)).collect();

    let mut total = BTreeMap::new();
    for r in &inputs.regions {
        let need_r: f64 = inputs.businesses.iter().map(|b| need(&r.name, b)).sum();
        for b in &inputs.businesses {
            let t = if need_r > 0.0 { need(&r.name, b) / need_r * r.capacity } else { 0.0 };
            total.insert((r.name.as_str(), b.name.as_str()), t);
        }
    }
    let shares = decompose_requirements(inputs);
    if shares.len() != total.len() {
        return Err(format!("{} business shares, expected {}", shares.len(), total.len()));
    }
    for s in &shares {
        let want = total[&(s.region.as_str(), s.business.as_str())];
        if s.total_provide != want {
            return Err(format!("totalbw_provide[{},{}] = {} but the formula gives {want}", s.region, s.business, s.total_provide));
        }
    }

    let mut rvs = BTreeMap::new();
    for r in &inputs.regions {
        for v in &inputs.vendors {
            for b in &inputs.businesses {
                let cap_rv = v.capacity.get(&r.name).copied().unwrap_or(0.0);
                let x = if cap_r[r.name.as_str()] > 0.0 { cap_rv / cap_r[r.name.as_str()] * total[&(r.name.as_str(), b.name.as_str())] } else { 0.0 };
                rvs.insert((r.name.as_str(), v.name.as_str(), b.name.as_str()), x);
            }
        }
    }
    let mut provision = BTreeMap::new();
    for v in &inputs.vendors {
        let p = v.provision.unwrap_or_else(|| {
            let mut acc = Vec::new();
            for r in &inputs.regions {
                for b in &inputs.businesses {
                    acc.push(rvs[&(r.name.as_str(), v.name.as_str(), b.name.as_str())]);
                }
            }
            acc.into_iter().sum()
        });
        provision.insert(v.name.as_str(), p);
    }
    let dec = vendor_decomposition(inputs, &shares);
    for s in &dec.by_business {
        let want = rvs[&(s.region.as_str(), s.vendor.as_str(), s.business.as_str())];
        if s.provide != want {
            return Err(format!("bw_provide[{},{},{}] = {} but the formula gives {want}", s.region, s.vendor, s.business, s.provide));
        }
    }
    for (v, p) in &dec.vendor_provision {
        if provision[v.as_str()] != *p {
            return Err(format!("bw_provide_v[{v}] = {p} but the formula gives {}", provision[v.as_str()]));
        }
    }
    let mut seen = 0;
    for r in &inputs.regions {
        for v in &inputs.vendors {
            for d in &inputs.domains {
                let provide: f64 = inputs
                    .businesses
                    .iter()
                    .filter(|b| b.domain == d.name)
                    .map(|b| rvs[&(r.name.as_str(), v.name.as_str(), b.name.as_str())])
                    .sum();
                let p_v = provision[v.name.as_str()];
                let expected = if p_v > 0.0 { d.expected_bw * provide / p_v } else { 0.0 };
                let got = dec
                    .by_domain
                    .iter()
                    .find(|x| x.region == r.name && x.vendor == v.name && x.domain == d.name)
                    .ok_or_else(|| format!("no Expbw entry for {},{},{}", r.name, v.name, d.name))?;
                if got.provide != provide || got.expected != expected {
                    return Err(format!(
                        "Expbw[{},{},{}] = ({}, {}) but the formula gives ({provide}, {expected})",
                        r.name, v.name, d.name, got.provide, got.expected
                    ));
                }
                seen += 1;
            }
        }
    }
    if seen != dec.by_domain.len() {
        return Err(format!("{} Expbw entries, expected {seen}", dec.by_domain.len()));
    }
    // conservation: shares fill the region whenever there is demand
    for r in &inputs.regions {
        let sum: f64 = shares.iter().filter(|s| s.region == r.name).map(|s| s.total_provide).sum();
        let demand: f64 = shares.iter().filter(|s| s.region == r.name).map(|s| s.need).sum();
        if demand > 0.0 && (sum - r.capacity).abs() > 1e-9 * r.capacity.max(1.0) {
            return Err(format!("region {} shares sum to {sum}, capacity {}", r.name, r.capacity));
        }
    }
    Ok(())
}

/// A small contention instance with integer capacities and targets, so the
/// optimum can be found by enumeration.
pub fn random_contention(rng: &mut impl Rng) -> (Vec<ResourceInstance>, Vec<DomainTarget>) {
    let cells: Vec<(String, String)> = (0..rng.random_range(1..=2)).map(|i| (format!("r{}", i % 2), format!("v{i}"))).collect();
    let instances: Vec<ResourceInstance> = (0..rng.random_range(1..=8))
        .map(|_| {
            let (region, vendor) = cells[rng.random_range(0..cells.len())].clone();
            ResourceInstance { region, vendor, capacity: rng.random_range(0..=4) as f64 }
        })
        .collect();
    let n_domains = rng.random_range(1..=4);
    let mut priorities: Vec<u32> = (0..10).collect();
    priorities.sort_by_key(|_| rng.random::<u32>());
    let mut targets = Vec::new();
    for d in 0..n_domains {
        for (region, vendor) in &cells {
            if rng.random_bool(0.8) {
                targets.push(DomainTarget {
                    domain: format!("d{d}"),
                    priority: priorities[d],
                    region: region.clone(),
                    vendor: vendor.clone(),
                    amount: rng.random_range(1..=5) as f64,
                });
            }
        }
    }
    targets.sort_by_key(|_| rng.random::<u32>());
    (instances, targets)
}

/// Per-domain granted totals, highest priority first, for the
/// lexicographically best assignment of instance capacity units to targets.
pub fn brute_force_optimum(instances: &[ResourceInstance], targets: &[DomainTarget]) -> Vec<(String, f64)> {
    let mut domains: Vec<(u32, String)> = targets.iter().map(|t| (t.priority, t.domain.clone())).collect::<BTreeSet<_>>().into_iter().collect();
    domains.sort_by(|a, b| b.0.cmp(&a.0));
    let amounts: Vec<u32> = targets.iter().map(|t| t.amount as u32).collect();

    // every reachable vector of units granted per target
    let mut states: HashSet<Vec<u32>> = HashSet::from([vec![0; targets.len()]]);
    for inst in instances {
        let eligible: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].region == inst.region && targets[i].vendor == inst.vendor).collect();
        let mut next = HashSet::new();
        for s in &states {
            spread(inst.capacity as u32, &eligible, 0, &mut s.clone(), &amounts, &mut next);
        }
        states = next;
    }
    let score = |s: &Vec<u32>| -> Vec<u32> {
        domains.iter().map(|(_, d)| (0..targets.len()).filter(|&i| &targets[i].domain == d).map(|i| s[i]).sum()).collect()
    };
    let best = states.iter().map(score).max().unwrap_or_default();
    domains.into_iter().zip(best).map(|((_, d), g)| (d, g as f64)).collect()
}

fn spread(units: u32, eligible: &[usize], k: usize, s: &mut Vec<u32>, amounts: &[u32], out: &mut HashSet<Vec<u32>>) {
    if k == eligible.len() {
        // leftover units stay unused
        out.insert(s.clone());
        return;
    }
    let i = eligible[k];
    let room = amounts[i] - s[i];
    for give in 0..=units.min(room) {
        s[i] += give;
        spread(units - give, eligible, k + 1, s, amounts, out);
        s[i] -= give;
    }
}

/// Checks a greedy plan for feasibility and against the brute-force optimum.
pub fn check_greedy(instances: &[ResourceInstance], targets: &[DomainTarget]) -> Result<(), String> {
    let plan = greedy_allocate(instances, targets);
    let mut used = vec![0.0; instances.len()];
    for g in &plan.grants {
        let inst = &instances[g.instance];
        if inst.region != g.region || inst.vendor != g.vendor {
            return Err(format!("grant {g:?} draws on instance {inst:?} of another cell"));
        }
        used[g.instance] += g.amount;
    }
    for (i, inst) in instances.iter().enumerate() {
        if used[i] > inst.capacity || (plan.leftover[i] - (inst.capacity - used[i])).abs() > 1e-12 {
            return Err(format!("instance {i} over-allocated: {} of {}", used[i], inst.capacity));
        }
    }
    for t in targets {
        let got: f64 = plan.grants.iter().filter(|g| g.domain == t.domain && g.region == t.region && g.vendor == t.vendor).map(|g| g.amount).sum();
        let missing: f64 = plan.shortfalls.iter().filter(|s| s.domain == t.domain && s.region == t.region && s.vendor == t.vendor).map(|s| s.missing).sum();
        if got > t.amount || (got + missing - t.amount).abs() > 1e-12 {
            return Err(format!("target {t:?}: granted {got}, shortfall {missing}"));
        }
    }
    for (domain, best) in brute_force_optimum(instances, targets) {
        let got = plan.granted(&domain);
        if got != best {
            return Err(format!("domain {domain} granted {got}, the optimum gives {best}; instances {instances:?} targets {targets:?}"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ journal

/// A store to ingest into: `(video, size, last served at)` residents.
#[derive(Debug, Clone)]
pub struct CrashCase {
    pub capacity: u64,
    pub chunk: u64,
    pub residents: Vec<(u32, u64, f64)>,
    pub incoming: (u32, u64),
}

pub fn crash_cases() -> Vec<CrashCase> {
    const MB: u64 = 1_000_000;
    vec![
        // fits without eviction
        CrashCase { capacity: 10 * MB, chunk: MB, residents: vec![(1, 3 * MB, 0.0)], incoming: (9, 2_500_000) },
        // one victim
        CrashCase { capacity: 6 * MB, chunk: MB, residents: vec![(1, 3 * MB, 0.0), (2, 2_200_000, 50.0)], incoming: (9, 2 * MB) },
        // several victims, short tail chunks everywhere
        CrashCase {
            capacity: 8 * MB,
            chunk: MB,
            residents: vec![(1, 1_500_000, 10.0), (2, 2_700_000, 400.0), (3, 1_100_000, 20.0), (4, 2_300_000, 0.0)],
            incoming: (9, 5_200_000),
        },
        // the incoming video takes the whole store
        CrashCase { capacity: 4 * MB, chunk: MB, residents: vec![(1, 2 * MB, 0.0), (2, 1_900_000, 5.0)], incoming: (9, 4 * MB) },
    ]
}

fn build_store(case: &CrashCase) -> ChunkStore {
    let mut store = ChunkStore::new(case.capacity, case.chunk, 1200);
    for &(v, size, t) in &case.residents {
        store.place_video(VideoId(v), size).expect("resident fits");
        store.touch(VideoId(v), SimTime::from_secs_f64(t));
    }
    store
}

pub fn plannable(case: &CrashCase) -> bool {
    Ingest::plan(&build_store(case), 1, VideoId(case.incoming.0), case.incoming.1, SimTime::from_secs_f64(600.0)).is_ok()
}

/// Crashes the ingest at every point: before each step, after each store
/// mutation with the journal record not yet written, and after the record.
/// Every restart must give exactly the state before or after the
/// operation. Returns the number of crash points checked.
pub fn crash_sweep(case: &CrashCase) -> Result<usize, String> {
    let now = SimTime::from_secs_f64(600.0);
    let (video, size) = (VideoId(case.incoming.0), case.incoming.1);
    let mut store = build_store(case);
    let pre = store.resident_set();
    let mut clean = store.clone();
    ingest_video(&mut clean, 1, video, size, &mut OriginFetcher, None, now).map_err(|e| e.to_string())?;
    let post = clean.resident_set();
    if pre == post {
        return Err("ingest changed nothing".into());
    }

    let mut points = vec![StoreSnapshot { store: store.clone(), journal: None }];
    let mut op = Ingest::plan(&store, 1, video, size, now).map_err(|e| e.to_string())?;
    points.push(StoreSnapshot { store: store.clone(), journal: Some(op.journal().clone()) });
    loop {
        let before = op.journal().clone();
        let more = op.evict_step(&mut store);
        points.push(StoreSnapshot { store: store.clone(), journal: Some(before) });
        points.push(StoreSnapshot { store: store.clone(), journal: Some(op.journal().clone()) });
        if !more {
            break;
        }
    }
    while let Some((seq, csize)) = op.next_chunk() {
        let before = op.journal().clone();
        op.write(&mut store, seq, &ContentSource::chunk_payload(video, seq, csize)).map_err(|e| e.to_string())?;
        points.push(StoreSnapshot { store: store.clone(), journal: Some(before) });
        points.push(StoreSnapshot { store: store.clone(), journal: Some(op.journal().clone()) });
    }
    op.commit().map_err(|e| e.to_string())?;
    points.push(StoreSnapshot { store: store.clone(), journal: Some(op.journal().clone()) });
    let committed = points.len() - 1;
    points.push(StoreSnapshot { store: store.clone(), journal: None });

    for (i, p) in points.into_iter().enumerate() {
        let text = p.to_json().map_err(|e| e.to_string())?;
        let (restored, recovery) = StoreSnapshot::from_json(&text).and_then(StoreSnapshot::restore).map_err(|e| format!("point {i}: {e}"))?;
        let got = restored.resident_set();
        let want = if i >= committed { &post } else { &pre };
        if &got != want {
            let kind = if got == pre { "pre" } else if got == post { "post" } else { "a mix" };
            return Err(format!("crash point {i} ({recovery:?}) restored {kind} state"));
        }
        if i >= committed && i < committed + 1 && recovery != Recovery::RolledForward {
            return Err(format!("crash point {i}: committed journal gave {recovery:?}"));
        }
        restored.verify_all().map_err(|e| format!("crash point {i}: {e}"))?;
    }
    Ok(committed + 2)
}

// ---------------------------------------------------------------- transport

pub const LOSS_LEVELS: [f64; 4] = [0.0, 0.05, 0.10, 0.20];

/// Session `i` of the reliability suite. Path 0 takes loss level `i % 4`
/// so every level appears; the other paths draw theirs at random.
pub fn reliability_session(i: u64) -> HarnessConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e55_0000 + i);
    let n_paths = 1 + (i / 4 % 4) as usize;
    let paths = (0..n_paths)
        .map(|p| {
            let loss = if p == 0 { LOSS_LEVELS[(i % 4) as usize] } else { LOSS_LEVELS[rng.random_range(0..4)] };
            HarnessPath::new(rng.random_range(10..=160), rng.random_range(1_000_000..=10_000_000), loss)
        })
        .collect();
    let transfer = TransferConfig {
        policy: SchedulerPolicy::ALL[(i / 16 % 4) as usize],
        bundle_size: [1, 4, 8, 16][rng.random_range(0..4)],
        reorder_window: [None, Some(64), Some(128)][rng.random_range(0..3)],
        ..Default::default()
    };
    let mut cfg = HarnessConfig::new(paths, rng.random_range(50_000..=400_000), transfer, i);
    cfg.chunk_bytes = [64_000, 256_000, 1_000_000][rng.random_range(0..3)];
    cfg.check_invariants = true;
    if i % 5 == 0 {
        cfg.medium = Some(Medium { rate_bps: 20_000_000, frame_overhead: SimDuration::from_micros(50), half_duplex: i % 10 == 0 });
    }
    cfg
}

/// Every way a reliability session can fall short, or `None`.
pub fn session_fault(r: &HarnessReport) -> Option<String> {
    if !r.completed {
        Some("did not complete".into())
    } else if !r.reassembly_exact {
        Some("reassembly differs from the source".into())
    } else if !r.in_order {
        Some("out-of-order delivery".into())
    } else if r.invariant_violations > 0 {
        Some(format!("{} invariant violations, first: {}", r.invariant_violations, r.first_violation.as_deref().unwrap_or("?")))
    } else {
        None
    }
}
