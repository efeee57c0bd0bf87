use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of bins of the default conditional CF grid.
pub const DEFAULT_CF_BINS: usize = 256;

/// Bin centers of a uniform `bins`-bin partition of [0, 1].
pub fn uniform_grid(bins: usize) -> Vec<f64> {
    (0..bins).map(|j| (j as f64 + 0.5) / bins as f64).collect()
}

/// Discrete distribution over scaled CF values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    bin_centers: Vec<f64>,
    masses: Vec<f64>,
}

impl Histogram1D {
    /// Normalizes non-negative `weights` over strictly ascending `bin_centers`.
    ///
    /// Fails with [`Error::OutsideSupport`] when the total weight is zero.
    pub fn from_weights(bin_centers: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if bin_centers.is_empty() || bin_centers.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} centers vs {} weights",
                bin_centers.len(),
                weights.len()
            )));
        }
        if bin_centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("bin centers must be strictly ascending".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("histogram weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::OutsideSupport);
        }
        let masses = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            bin_centers,
            masses,
        })
    }

    /// Empirical distribution of `values` (duplicates pooled).
    pub fn empirical(values: &[f64]) -> Result<Self> {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut centers: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for v in sorted {
            if centers.last() == Some(&v) {
                *counts.last_mut().unwrap() += 1.0;
            } else {
                centers.push(v);
                counts.push(1.0);
            }
        }
        Self::from_weights(centers, counts)
    }

    /// All mass at one value.
    pub fn point_mass(value: f64) -> Self {
        Self {
            bin_centers: vec![value],
            masses: vec![1.0],
        }
    }

    pub fn bin_centers(&self) -> &[f64] {
        &self.bin_centers
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> f64 {
        self.bin_centers
            .iter()
            .zip(&self.masses)
            .map(|(c, m)| c * m)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.bin_centers
            .iter()
            .zip(&self.masses)
            .map(|(c, m)| m * (c - mean) * (c - mean))
            .sum()
    }

    /// Index of the heaviest bin (first on ties).
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.masses.iter().enumerate() {
            if *m > self.masses[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_and_summarizes() {
        let h = Histogram1D::from_weights(vec![0.25, 0.75], vec![1.0, 3.0]).unwrap();
        assert_eq!(h.masses(), &[0.25, 0.75]);
        assert!((h.mean() - 0.625).abs() < 1e-15);
        assert!((h.variance() - 0.25 * 0.75 * 0.25).abs() < 1e-15);
        assert_eq!(h.mode_index(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Histogram1D::from_weights(vec![0.1, 0.2], vec![0.0, 0.0]),
            Err(Error::OutsideSupport)
        ));
        assert!(Histogram1D::from_weights(vec![0.2, 0.1], vec![1.0, 1.0]).is_err());
        assert!(Histogram1D::from_weights(vec![0.1, 0.2], vec![1.0, -1.0]).is_err());
        assert!(Histogram1D::from_weights(vec![0.1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn empirical_pools_duplicates() {
        let h = Histogram1D::empirical(&[0.5, 0.2, 0.5, 0.9]).unwrap();
        assert_eq!(h.bin_centers(), &[0.2, 0.5, 0.9]);
        assert_eq!(h.masses(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn uniform_grid_centers() {
        let g = uniform_grid(4);
        assert_eq!(g, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(uniform_grid(DEFAULT_CF_BINS).len(), 256);
    }
}
