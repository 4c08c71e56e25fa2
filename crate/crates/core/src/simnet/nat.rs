use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::NatClass;
use crate::time::SimDuration;

/// Hole-punching model. Each punch takes a uniform delay around the mean
/// and fails with a fixed probability, or always when the two NAT classes
/// cannot traverse each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatModel {
    pub punch_mean: SimDuration,
    pub punch_jitter: SimDuration,
    pub failure_probability: f64,
    /// Relative frequency of each class, in `NatClass::ALL` order.
    pub class_weights: [f64; 5],
}

impl Default for NatModel {
    fn default() -> Self {
        Self {
            punch_mean: SimDuration::from_millis(200),
            punch_jitter: SimDuration::from_millis(40),
            failure_probability: 0.02,
            class_weights: [0.2, 0.3, 0.2, 0.2, 0.1],
        }
    }
}

impl NatModel {
    pub fn draw_class(&self, rng: &mut impl Rng) -> NatClass {
        let total: f64 = self.class_weights.iter().sum();
        let mut x = rng.random::<f64>() * total;
        for (i, w) in self.class_weights.iter().enumerate() {
            if x < *w {
                return NatClass::ALL[i];
            }
            x -= w;
        }
        NatClass::ALL[4]
    }

    /// One punch attempt: its delay, or `None` when it fails.
    pub fn punch(&self, a: NatClass, b: NatClass, rng: &mut impl Rng) -> Option<SimDuration> {
        let lo = self.punch_mean.as_micros().saturating_sub(self.punch_jitter.as_micros());
        let hi = self.punch_mean.as_micros() + self.punch_jitter.as_micros();
        let delay = SimDuration(rng.random_range(lo..=hi));
        let fail = rng.random::<f64>() < self.failure_probability;
        (a.compatible(b) && !fail).then_some(delay)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::rng::{RngFactory, Stream};

    #[test]
    fn connect_is_about_thirty_percent_slower_than_cdn() {
        // tracker round trip plus the slowest of five parallel punches,
        // against the default 200 ms CDN connect
        let nat = NatModel::default();
        let mut rng = RngFactory::new(1).stream(Stream::Nat, 0);
        let n = 4000;
        let mut total = 0.0;
        for _ in 0..n {
            let slowest = (0..5).filter_map(|_| nat.punch(NatClass::Open, NatClass::Open, &mut rng)).max().unwrap_or_default();
            total += 40.0 + slowest.as_millis_f64();
        }
        let ratio = total / n as f64 / 200.0;
        assert!((1.2..1.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn incompatible_classes_never_connect() {
        let nat = NatModel { failure_probability: 0.0, ..Default::default() };
        let mut rng = RngFactory::new(1).stream(Stream::Nat, 0);
        assert!(nat.punch(NatClass::Symmetric, NatClass::Symmetric, &mut rng).is_none());
        assert!(nat.punch(NatClass::Open, NatClass::Symmetric, &mut rng).is_some());
    }
}
