use rand::Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VideoId;

/// Watch time is exponential so that the chance of watching another
/// `ABANDON_REFERENCE_S` seconds is the continue probability, whatever the
/// segment length.
pub const ABANDON_REFERENCE_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub videos: usize,
    pub zipf_exponent: f64,
    pub clients: u32,
    /// Poisson arrival rate of new clients, per second.
    pub arrival_rate: f64,
    pub continue_probability: f64,
    pub think_s: (f64, f64),
    /// Relative client share of each region.
    pub region_weights: Vec<f64>,
}

/// Per-client draw source for the request trace.
pub struct RequestTrace {
    zipf: Zipf<f64>,
    watch: Option<Exp<f64>>,
    think: (f64, f64),
}

impl RequestTrace {
    pub fn new(spec: &WorkloadSpec) -> Result<Self> {
        let zipf = Zipf::new(spec.videos.max(1) as f64, spec.zipf_exponent)
            .map_err(|e| Error::invalid("workload.zipf_exponent", e.to_string()))?;
        let p = spec.continue_probability;
        let watch = if p >= 1.0 {
            None
        } else {
            let rate = -p.ln() / ABANDON_REFERENCE_S;
            Some(Exp::new(rate).map_err(|e| Error::invalid("workload.continue_probability", e.to_string()))?)
        };
        Ok(Self { zipf, watch, think: spec.think_s })
    }

    /// Video by popularity rank: rank one is video 0.
    pub fn video(&self, rng: &mut impl Rng) -> VideoId {
        VideoId(self.zipf.sample(rng) as u32 - 1)
    }

    /// Seconds the viewer intends to watch, `None` meaning to the end.
    pub fn watch_target(&self, rng: &mut impl Rng) -> Option<f64> {
        self.watch.map(|d| d.sample(rng))
    }

    pub fn think(&self, rng: &mut impl Rng) -> f64 {
        if self.think.1 > self.think.0 {
            rng.random_range(self.think.0..self.think.1)
        } else {
            self.think.0
        }
    }
}

/// Index drawn with probability proportional to `weights`.
pub fn weighted_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len().saturating_sub(1)
}

/// Arrival times of `count` clients from a Poisson process.
pub fn arrivals(count: u32, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut t = 0.0;
    let gap = Exp::new(rate.max(1e-9)).expect("positive rate");
    (0..count)
        .map(|i| {
            if i > 0 {
                t += gap.sample(rng);
            }
            t
        })
        .collect()
}
