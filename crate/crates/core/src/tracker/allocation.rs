//! Bandwidth decomposition and greedy priority allocation.
//!
//! Regions have a calibrated capacity that is split across businesses in
//! proportion to their peak need, then across vendors in proportion to each
//! vendor's capacity in the region. Business domains group businesses; each
//! domain carries an expected bandwidth that is apportioned to
//! (region, vendor) cells. Resource instances are finally matched to those
//! targets in strict domain priority order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionInput {
    pub name: String,
    /// Calibrated capacity `cap_r`.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VendorInput {
    pub name: String,
    /// `cap_rv` keyed by region name.
    pub capacity: BTreeMap<String, f64>,
    /// Total provision `bw_provide_v`. Defaults to the vendor's summed
    /// business shares.
    #[serde(default)]
    pub provision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusinessInput {
    pub name: String,
    pub domain: String,
    /// Historical peak bandwidth keyed by region name.
    pub peak: BTreeMap<String, f64>,
    #[serde(default = "default_fluctuation")]
    pub fluctuation: f64,
}

fn default_fluctuation() -> f64 {
    1.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainInput {
    pub name: String,
    /// Larger is served first.
    pub priority: u32,
    /// `Expbw_d`.
    pub expected_bw: f64,
}

/// A concrete bandwidth resource owned by a vendor in a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceInstance {
    pub region: String,
    pub vendor: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationInputs {
    pub regions: Vec<RegionInput>,
    pub vendors: Vec<VendorInput>,
    pub businesses: Vec<BusinessInput>,
    pub domains: Vec<DomainInput>,
    /// Defaults to one instance per (region, vendor) of size `cap_rv`.
    #[serde(default)]
    pub instances: Vec<ResourceInstance>,
}

impl AllocationInputs {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|source| Error::Toml { what: "allocation inputs".into(), source })
    }

    /// Checks names, signs and that vendor capacities add up to each
    /// region's capacity.
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::invalid("regions", "at least one region is required"));
        }
        if self.vendors.is_empty() {
            return Err(Error::invalid("vendors", "at least one vendor is required"));
        }
        let regions: Vec<&str> = self.regions.iter().map(|r| r.name.as_str()).collect();
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.capacity >= 0.0 && r.capacity.is_finite()) {
                return Err(Error::invalid(format!("regions[{i}].capacity"), "must be a non-negative number"));
            }
            if regions[..i].contains(&r.name.as_str()) {
                return Err(Error::invalid(format!("regions[{i}].name"), format!("duplicate region {}", r.name)));
            }
        }
        for (i, v) in self.vendors.iter().enumerate() {
            for (region, cap) in &v.capacity {
                if !regions.contains(&region.as_str()) {
                    return Err(Error::invalid(format!("vendors[{i}].capacity.{region}"), "unknown region"));
                }
                if !(*cap >= 0.0 && cap.is_finite()) {
                    return Err(Error::invalid(format!("vendors[{i}].capacity.{region}"), "must be a non-negative number"));
                }
            }
            if v.provision.is_some_and(|p| !(p > 0.0)) {
                return Err(Error::invalid(format!("vendors[{i}].provision"), "must be positive"));
            }
        }
        for r in &self.regions {
            let sum: f64 = self.vendors.iter().filter_map(|v| v.capacity.get(&r.name)).sum();
            if (sum - r.capacity).abs() > 1e-9 * r.capacity.abs().max(1.0) {
                return Err(Error::invalid(
                    format!("region {}", r.name),
                    format!("vendor capacities sum to {sum} but the region capacity is {}", r.capacity),
                ));
            }
        }
        let domains: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        for (i, b) in self.businesses.iter().enumerate() {
            if !domains.contains(&b.domain.as_str()) {
                return Err(Error::invalid(format!("businesses[{i}].domain"), format!("unknown domain {}", b.domain)));
            }
            if !(b.fluctuation >= 0.0) {
                return Err(Error::invalid(format!("businesses[{i}].fluctuation"), "must be non-negative"));
            }
            for (region, peak) in &b.peak {
                if !regions.contains(&region.as_str()) {
                    return Err(Error::invalid(format!("businesses[{i}].peak.{region}"), "unknown region"));
                }
                if !(*peak >= 0.0) {
                    return Err(Error::invalid(format!("businesses[{i}].peak.{region}"), "must be non-negative"));
                }
            }
        }
        for (i, inst) in self.instances.iter().enumerate() {
            if !regions.contains(&inst.region.as_str()) || !self.vendors.iter().any(|v| v.name == inst.vendor) {
                return Err(Error::invalid(format!("instances[{i}]"), "unknown region or vendor"));
            }
            if !(inst.capacity >= 0.0) {
                return Err(Error::invalid(format!("instances[{i}].capacity"), "must be non-negative"));
            }
        }
        Ok(())
    }

    /// `bw_need_rs`: peak times fluctuation coefficient.
    pub fn need(&self, region: &str, business: &BusinessInput) -> f64 {
        business.peak.get(region).copied().unwrap_or(0.0) * business.fluctuation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusinessShare {
    pub region: String,
    pub business: String,
    pub need: f64,
    /// `totalbw_provide_rs`.
    pub total_provide: f64,
}

/// `totalbw_provide_rs = bw_need_rs / bw_need_r * cap_r` for every region
/// and business. Regions without demand get zeros.
pub fn decompose_requirements(inputs: &AllocationInputs) -> Vec<BusinessShare> {
    let mut out = Vec::new();
    for r in &inputs.regions {
        let need_r: f64 = inputs.businesses.iter().map(|b| inputs.need(&r.name, b)).sum();
        for b in &inputs.businesses {
            let need = inputs.need(&r.name, b);
            let total_provide = if need_r > 0.0 { need / need_r * r.capacity } else { 0.0 };
            out.push(BusinessShare { region: r.name.clone(), business: b.name.clone(), need, total_provide });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorBusinessShare {
    pub region: String,
    pub vendor: String,
    pub business: String,
    /// `bw_provide_rvs`.
    pub provide: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorDomainShare {
    pub region: String,
    pub vendor: String,
    pub domain: String,
    /// `bw_provide_rvd`, the sum of the domain's business shares.
    pub provide: f64,
    /// `Expbw_rvd`.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorDecomposition {
    pub by_business: Vec<VendorBusinessShare>,
    pub by_domain: Vec<VendorDomainShare>,
    /// `bw_provide_v`.
    pub vendor_provision: BTreeMap<String, f64>,
}

/// `bw_provide_rvs = cap_rv / cap_r * totalbw_provide_rs`, summed per
/// domain, then `Expbw_rvd = Expbw_d * bw_provide_rvd / bw_provide_v`.
pub fn vendor_decomposition(inputs: &AllocationInputs, totals: &[BusinessShare]) -> VendorDecomposition {
    let total_of = |region: &str, business: &str| {
        totals.iter().find(|t| t.region == region && t.business == business).map_or(0.0, |t| t.total_provide)
    };
    let mut by_business = Vec::new();
    for r in &inputs.regions {
        for v in &inputs.vendors {
            let cap_rv = v.capacity.get(&r.name).copied().unwrap_or(0.0);
            for b in &inputs.businesses {
                let provide = if r.capacity > 0.0 { cap_rv / r.capacity * total_of(&r.name, &b.name) } else { 0.0 };
                by_business.push(VendorBusinessShare {
                    region: r.name.clone(),
                    vendor: v.name.clone(),
                    business: b.name.clone(),
                    provide,
                });
            }
        }
    }
    let mut vendor_provision = BTreeMap::new();
    for v in &inputs.vendors {
        let p = v.provision.unwrap_or_else(|| by_business.iter().filter(|s| s.vendor == v.name).map(|s| s.provide).sum());
        vendor_provision.insert(v.name.clone(), p);
    }
    let mut by_domain = Vec::new();
    for r in &inputs.regions {
        for v in &inputs.vendors {
            for d in &inputs.domains {
                let provide: f64 = inputs
                    .businesses
                    .iter()
                    .filter(|b| b.domain == d.name)
                    .map(|b| {
                        by_business
                            .iter()
                            .find(|s| s.region == r.name && s.vendor == v.name && s.business == b.name)
                            .map_or(0.0, |s| s.provide)
                    })
                    .sum();
                let provision = vendor_provision[&v.name];
                let expected = if provision > 0.0 { d.expected_bw * provide / provision } else { 0.0 };
                by_domain.push(VendorDomainShare {
                    region: r.name.clone(),
                    vendor: v.name.clone(),
                    domain: d.name.clone(),
                    provide,
                    expected,
                });
            }
        }
    }
    VendorDecomposition { by_business, by_domain, vendor_provision }
}

/// What one domain wants from one (region, vendor) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTarget {
    pub domain: String,
    pub priority: u32,
    pub region: String,
    pub vendor: String,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub instance: usize,
    pub region: String,
    pub vendor: String,
    pub domain: String,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub domain: String,
    pub region: String,
    pub vendor: String,
    pub missing: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub grants: Vec<Grant>,
    pub shortfalls: Vec<Shortfall>,
    /// Capacity left on each instance after allocation.
    pub leftover: Vec<f64>,
}

impl AllocationPlan {
    /// Total granted to a domain.
    pub fn granted(&self, domain: &str) -> f64 {
        self.grants.iter().filter(|g| g.domain == domain).map(|g| g.amount).sum()
    }
}

/// Serves domains in descending priority. Each target draws on the
/// instances of its cell, largest remaining capacity first, until met;
/// whatever is left stays available to lower tiers. Unmet targets are
/// reported as shortfalls.
pub fn greedy_allocate(instances: &[ResourceInstance], targets: &[DomainTarget]) -> AllocationPlan {
    let mut remaining: Vec<f64> = instances.iter().map(|i| i.capacity).collect();
    let mut order: Vec<&DomainTarget> = targets.iter().collect();
    // stable: equal priorities keep input order
    order.sort_by(|a, b| b.priority.cmp(&a.priority));
    let mut plan = AllocationPlan::default();
    for t in order {
        let mut need = t.amount;
        while need > 0.0 {
            let best = (0..instances.len())
                .filter(|&i| instances[i].region == t.region && instances[i].vendor == t.vendor && remaining[i] > 0.0)
                .max_by(|&a, &b| remaining[a].total_cmp(&remaining[b]).then(b.cmp(&a)));
            let Some(i) = best else { break };
            let take = need.min(remaining[i]);
            remaining[i] -= take;
            need -= take;
            plan.grants.push(Grant {
                instance: i,
                region: t.region.clone(),
                vendor: t.vendor.clone(),
                domain: t.domain.clone(),
                amount: take,
            });
        }
        if need > 0.0 {
            plan.shortfalls.push(Shortfall {
                domain: t.domain.clone(),
                region: t.region.clone(),
                vendor: t.vendor.clone(),
                missing: need,
            });
        }
    }
    plan.leftover = remaining;
    plan
}

/// Full output of the allocation tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub business_shares: Vec<BusinessShare>,
    pub vendors: VendorDecomposition,
    pub targets: Vec<DomainTarget>,
    pub instances: Vec<ResourceInstance>,
    pub plan: AllocationPlan,
}

pub fn allocate(inputs: &AllocationInputs) -> Result<AllocationReport> {
    inputs.validate()?;
    let business_shares = decompose_requirements(inputs);
    let vendors = vendor_decomposition(inputs, &business_shares);
    let targets: Vec<DomainTarget> = vendors
        .by_domain
        .iter()
        .filter(|s| s.expected > 0.0)
        .map(|s| DomainTarget {
            domain: s.domain.clone(),
            priority: inputs.domains.iter().find(|d| d.name == s.domain).map_or(0, |d| d.priority),
            region: s.region.clone(),
            vendor: s.vendor.clone(),
            amount: s.expected,
        })
        .collect();
    let instances = if inputs.instances.is_empty() {
        let mut v = Vec::new();
        for r in &inputs.regions {
            for vendor in &inputs.vendors {
                if let Some(&cap) = vendor.capacity.get(&r.name) {
                    v.push(ResourceInstance { region: r.name.clone(), vendor: vendor.name.clone(), capacity: cap });
                }
            }
        }
        v
    } else {
        inputs.instances.clone()
    };
    let plan = greedy_allocate(&instances, &targets);
    Ok(AllocationReport { business_shares, vendors, targets, instances, plan })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_business_region() -> AllocationInputs {
        AllocationInputs {
            regions: vec![RegionInput { name: "r".into(), capacity: 100.0 }],
            vendors: vec![
                VendorInput { name: "v".into(), capacity: [("r".to_string(), 30.0)].into(), provision: None },
                VendorInput { name: "w".into(), capacity: [("r".to_string(), 70.0)].into(), provision: None },
            ],
            businesses: vec![
                BusinessInput { name: "A".into(), domain: "d".into(), peak: [("r".to_string(), 60.0)].into(), fluctuation: 1.0 },
                BusinessInput { name: "B".into(), domain: "d".into(), peak: [("r".to_string(), 90.0)].into(), fluctuation: 1.0 },
            ],
            domains: vec![DomainInput { name: "d".into(), priority: 1, expected_bw: 50.0 }],
            instances: vec![],
        }
    }

    #[test]
    fn proportional_split_of_region_capacity() {
        let shares = decompose_requirements(&two_business_region());
        assert_eq!(shares[0].total_provide, 40.0);
        assert_eq!(shares[1].total_provide, 60.0);
    }

    #[test]
    fn vendor_share_of_business_total() {
        let inputs = two_business_region();
        let d = vendor_decomposition(&inputs, &decompose_requirements(&inputs));
        let va = d.by_business.iter().find(|s| s.vendor == "v" && s.business == "A").unwrap();
        assert!((va.provide - 12.0).abs() < 1e-12);
    }

    #[test]
    fn expected_domain_bandwidth_scales_by_vendor_provision() {
        let mut inputs = two_business_region();
        inputs.businesses.truncate(1);
        inputs.vendors[0].provision = Some(120.0);
        let totals = vec![BusinessShare { region: "r".into(), business: "A".into(), need: 60.0, total_provide: 40.0 }];
        let d = vendor_decomposition(&inputs, &totals);
        let cell = d.by_domain.iter().find(|s| s.vendor == "v").unwrap();
        assert!((cell.provide - 12.0).abs() < 1e-12);
        assert!((cell.expected - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_region_gets_zeros() {
        let mut inputs = two_business_region();
        for b in &mut inputs.businesses {
            b.peak.clear();
        }
        assert!(decompose_requirements(&inputs).iter().all(|s| s.total_provide == 0.0));
    }

    #[test]
    fn strict_priority_on_a_contested_instance() {
        let inst = vec![ResourceInstance { region: "r".into(), vendor: "v".into(), capacity: 10.0 }];
        let t = |d: &str, p| DomainTarget { domain: d.into(), priority: p, region: "r".into(), vendor: "v".into(), amount: 10.0 };
        let plan = greedy_allocate(&inst, &[t("low", 1), t("high", 2)]);
        assert_eq!(plan.granted("high"), 10.0);
        assert_eq!(plan.granted("low"), 0.0);
        assert_eq!(plan.shortfalls.len(), 1);
        assert_eq!(plan.shortfalls[0].missing, 10.0);
    }

    #[test]
    fn validation_names_the_inconsistent_region() {
        let mut inputs = two_business_region();
        inputs.vendors[1].capacity.insert("r".into(), 60.0);
        let err = inputs.validate().unwrap_err().to_string();
        assert!(err.contains("region r"), "{err}");
        let mut inputs = two_business_region();
        inputs.vendors.clear();
        assert!(inputs.validate().is_err());
    }
}
