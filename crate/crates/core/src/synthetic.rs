//! Synthetic base datasets for tests, demos and benches.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::BaseDataset;
use crate::rng;

/// Two isotropic Gaussian classes centred at `-offset·1` (class 0) and `+offset·1` (class 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGaussians {
    pub n_items: usize,
    pub n_features: usize,
    pub offset: f64,
    pub std_dev: f64,
    /// Exact share of class-1 items (rounded to the nearest count).
    pub positive_fraction: f64,
}

impl Default for TwoGaussians {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_features: 2,
            offset: 2.0,
            std_dev: 1.0,
            positive_fraction: 0.5,
        }
    }
}

impl TwoGaussians {
    pub fn generate(&self, seed: u64) -> BaseDataset {
        let mut r = rng::rng(seed);
        let n = self.n_items;
        let n_pos = ((n as f64) * self.positive_fraction).round() as usize;
        let n_pos = n_pos.clamp(1, n - 1);
        let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < n_pos)).collect();
        labels.shuffle(&mut r);
        let mut x = Array2::zeros((n, self.n_features));
        for (i, &y) in labels.iter().enumerate() {
            let centre = if y == 1 { self.offset } else { -self.offset };
            for j in 0..self.n_features {
                let z: f64 = StandardNormal.sample(&mut r);
                x[[i, j]] = centre + self.std_dev * z;
            }
        }
        let names = (0..self.n_features).map(|j| format!("x{j}")).collect();
        BaseDataset::new(x, labels, names, 2).expect("two non-empty classes")
    }
}

/// `n` items in two dimensions, means ±(2, 2), unit covariance.
pub fn two_gaussians(n: usize, positive_fraction: f64, seed: u64) -> BaseDataset {
    TwoGaussians {
        n_items: n,
        positive_fraction,
        ..TwoGaussians::default()
    }
    .generate(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_separated() {
        let ds = two_gaussians(2000, 0.5, 1);
        assert_eq!(ds.class_counts(), vec![1000, 1000]);
        let x = ds.features();
        let m1: f64 = ds
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(i, _)| x[[i, 0]])
            .sum::<f64>()
            / 1000.0;
        assert!((m1 - 2.0).abs() < 0.15);
        assert_eq!(two_gaussians(50, 0.5, 3), two_gaussians(50, 0.5, 3));
    }
}
