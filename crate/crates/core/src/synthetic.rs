//! Learning curves generated exactly from the power law, with optional
//! multiplicative noise on intrinsic performance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::curves::{MetricKind, RunSet};
use crate::error::{Error, Result};
use crate::scalinglaw::{derive_constants, efficient_frontier, predict_intrinsic};

/// A synthetic family: `metric = transform(I(N, E) * exp(noise * z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamily {
    pub family_id: String,
    pub alpha_n: f64,
    pub alpha_e: f64,
    pub n_c: f64,
    pub sizes: Vec<u64>,
    pub points_per_size: usize,
    /// Interaction window extends this factor beyond the frontier of the
    /// smallest and largest sizes.
    pub margin: f64,
    pub noise: f64,
    pub seeds: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        Self {
            family_id: "synthetic".into(),
            alpha_n: 0.542,
            alpha_e: 0.462,
            n_c: 2.53e-2,
            sizes: (0..6).map(|k| 19_408u64 << k).collect(),
            points_per_size: 64,
            margin: 10.0,
            noise: 0.0,
            seeds: 1,
            rng_seed: 0,
        }
    }
}

impl SyntheticFamily {
    /// Interaction counts shared by every size, rounded to integers.
    pub fn interactions(&self) -> Result<Vec<u64>> {
        if self.sizes.is_empty() || self.points_per_size < 2 || !(self.margin >= 1.0) {
            return Err(Error::InvalidArgument(
                "need sizes, >= 2 points per size and margin >= 1".into(),
            ));
        }
        let law = derive_constants(self.alpha_n, self.alpha_e, self.n_c)?;
        let lo_n = *self.sizes.iter().min().unwrap() as f64;
        let hi_n = *self.sizes.iter().max().unwrap() as f64;
        let e_lo = (efficient_frontier(&law, lo_n)? / self.margin).max(1.0);
        let e_hi = efficient_frontier(&law, hi_n)? * self.margin;
        let last = (self.points_per_size - 1) as f64;
        let mut grid: Vec<u64> = (0..self.points_per_size)
            .map(|k| (e_lo * (e_hi / e_lo).powf(k as f64 / last)).round() as u64)
            .collect();
        grid.dedup();
        Ok(grid)
    }

    /// Generates raw runs, one record per (size, seed, interaction count).
    pub fn generate(&self, metric_kind: MetricKind, transform: impl Fn(f64) -> f64) -> Result<RunSet> {
        let law = derive_constants(self.alpha_n, self.alpha_e, self.n_c)?;
        let grid = self.interactions()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let mut runs = RunSet::new(metric_kind);
        for &n in &self.sizes {
            for seed in 0..self.seeds.max(1) {
                for &e in &grid {
                    let i = predict_intrinsic(&law, n as f64, e as f64)?.value;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let metric = transform(i * (self.noise * z).exp());
                    runs.insert(&self.family_id, n, seed as i64, e, metric)?;
                }
            }
        }
        Ok(runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_family_shape() {
        let fam = SyntheticFamily::default();
        let runs = fam.generate(MetricKind::Return, f64::ln).unwrap();
        assert_eq!(runs.len(), 6 * 64);
        let again = fam.generate(MetricKind::Return, f64::ln).unwrap();
        assert_eq!(runs, again);
    }

    #[test]
    fn noise_is_seeded() {
        let fam = SyntheticFamily {
            noise: 0.05,
            seeds: 3,
            ..Default::default()
        };
        let a = fam.generate(MetricKind::Return, f64::ln).unwrap();
        let b = fam.generate(MetricKind::Return, f64::ln).unwrap();
        let c = SyntheticFamily {
            rng_seed: 1,
            ..fam.clone()
        }
        .generate(MetricKind::Return, f64::ln)
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 6 * 64 * 3);
    }

    #[test]
    fn rejects_bad_shape() {
        let fam = SyntheticFamily {
            points_per_size: 1,
            ..Default::default()
        };
        assert!(fam.interactions().is_err());
    }
}
