//! Product-kernel density estimation over scaled (date, ndvi, cf) triples.
//!
//! The estimate is `P(x) = 1/(N·h₁h₂h₃) Σₙ Πd K((x_d − x_{n,d})/h_d)`, i.e.
//! the hypercube (box) window count normalized by the cell volume so that
//! it integrates to one. A Gaussian kernel is the default.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram1D;
use crate::knn::fold_assignment;
use crate::stats::ScaledTriple;

/// Densities are floored here before taking logs, and conditioning points
/// whose densities all fall below it are rejected.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Unit hypercube window: 1 for |u| ≤ ½.
    Box,
    #[default]
    Gaussian,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Box => {
                if u.abs() <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub kernel: Kernel,
    #[serde(rename = "h")]
    pub bandwidth: [f64; 3],
    pub samples: Vec<[f64; 3]>,
}

impl KdeModel {
    pub fn new(samples: Vec<[f64; 3]>, bandwidth: [f64; 3], kernel: Kernel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("KDE needs at least one sample".into()));
        }
        if bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive: {bandwidth:?}")));
        }
        Ok(Self {
            kernel,
            bandwidth,
            samples,
        })
    }

    pub fn fit(data: &[ScaledTriple], h: f64, kernel: Kernel) -> Result<Self> {
        Self::new(data.iter().map(|t| t.to_array()).collect(), [h; 3], kernel)
    }

    fn volume(&self) -> f64 {
        self.bandwidth.iter().product()
    }
}

pub fn kde_density(model: &KdeModel, x: &ScaledTriple) -> f64 {
    let x = x.to_array();
    let h = model.bandwidth;
    let sum: f64 = model
        .samples
        .iter()
        .map(|s| (0..3).map(|d| model.kernel.eval((x[d] - s[d]) / h[d])).product::<f64>())
        .sum();
    sum / (model.samples.len() as f64 * model.volume())
}

/// Candidate bandwidths `lo, lo + step, …, hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for BandwidthGrid {
    fn default() -> Self {
        Self {
            lo: 0.001,
            hi: 1.0,
            step: 0.001,
        }
    }
}

impl BandwidthGrid {
    pub fn single(h: f64) -> Self {
        Self {
            lo: h,
            hi: h,
            step: 1.0,
        }
    }

    pub fn candidates(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.hi < self.lo || !(self.lo > 0.0) {
            return Vec::new();
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub h: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    pub best_h: f64,
    pub kernel: Kernel,
    pub table: Vec<BandwidthRow>,
}

/// Per-fold pairwise distances between held-out and training points.
struct FoldPairs {
    n_train: usize,
    /// Row per held-out point: squared Euclidean (gaussian) or Chebyshev (box) distances.
    rows: Vec<Vec<f64>>,
}

/// Selects the shared bandwidth maximizing the mean held-out log-density
/// over `folds` seeded folds; the smallest h wins ties.
pub fn grid_search_bandwidth(
    data: &[ScaledTriple],
    grid: &BandwidthGrid,
    kernel: Kernel,
    folds: usize,
    seed: u64,
) -> Result<BandwidthSearch> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty bandwidth grid".into()));
    }
    let n = data.len();
    if folds < 2 || n < folds {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot form {folds} folds"
        )));
    }
    let assign = fold_assignment(n, folds, seed);
    let pts: Vec<[f64; 3]> = data.iter().map(|t| t.to_array()).collect();
    let pairs: Vec<FoldPairs> = (0..folds)
        .map(|f| {
            let train: Vec<&[f64; 3]> = pts
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a != f)
                .map(|(p, _)| p)
                .collect();
            let rows = pts
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == f)
                .map(|(q, _)| {
                    train
                        .iter()
                        .map(|p| match kernel {
                            Kernel::Gaussian => (0..3).map(|d| (q[d] - p[d]).powi(2)).sum(),
                            Kernel::Box => (0..3).map(|d| (q[d] - p[d]).abs()).fold(0.0, f64::max),
                        })
                        .collect()
                })
                .collect();
            FoldPairs {
                n_train: train.len(),
                rows,
            }
        })
        .collect();

    let table: Vec<BandwidthRow> = candidates
        .par_iter()
        .map(|&h| {
            let fold_scores: f64 = pairs
                .iter()
                .map(|fp| {
                    let norm = fp.n_train as f64 * h * h * h;
                    let total: f64 = fp
                        .rows
                        .iter()
                        .map(|row| {
                            let s: f64 = match kernel {
                                Kernel::Gaussian => {
                                    let c = (2.0 * PI).powf(-1.5);
                                    let inv = -0.5 / (h * h);
                                    row.iter().map(|d2| (d2 * inv).exp()).sum::<f64>() * c
                                }
                                Kernel::Box => {
                                    row.iter().filter(|&&d| d / h <= 0.5).count() as f64
                                }
                            };
                            (s / norm).max(DENSITY_FLOOR).ln()
                        })
                        .sum();
                    total / fp.rows.len() as f64
                })
                .sum();
            BandwidthRow {
                h,
                score: fold_scores / folds as f64,
            }
        })
        .collect();
    let best = table
        .iter()
        .fold(&table[0], |b, r| if r.score > b.score { r } else { b });
    Ok(BandwidthSearch {
        best_h: best.h,
        kernel,
        table,
    })
}

/// Conditional CF distribution at fixed (date01, ndvi01), evaluated on `cf_grid`.
pub fn kde_conditional(
    model: &KdeModel,
    date01: f64,
    ndvi01: f64,
    cf_grid: &[f64],
) -> Result<Histogram1D> {
    let h = model.bandwidth;
    let k = model.kernel;
    let norm = model.samples.len() as f64 * model.volume();
    // Separable kernel: the (date, ndvi) factor is shared by every grid value.
    let partial: Vec<(f64, f64)> = model
        .samples
        .iter()
        .map(|s| {
            (
                k.eval((date01 - s[0]) / h[0]) * k.eval((ndvi01 - s[1]) / h[1]),
                s[2],
            )
        })
        .filter(|(w, _)| *w > 0.0)
        .collect();
    let densities: Vec<f64> = cf_grid
        .iter()
        .map(|&cf| partial.iter().map(|(w, c)| w * k.eval((cf - c) / h[2])).sum::<f64>() / norm)
        .collect();
    if densities.iter().all(|d| *d < DENSITY_FLOOR) {
        return Err(Error::OutsideSupport);
    }
    Histogram1D::from_weights(cf_grid.to_vec(), densities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple(x: [f64; 3]) -> ScaledTriple {
        ScaledTriple {
            date01: x[0],
            ndvi01: x[1],
            cf01: x[2],
        }
    }

    #[test]
    fn density_closed_forms() {
        let m = KdeModel::new(vec![[0.5; 3]], [0.1; 3], Kernel::Gaussian).unwrap();
        let p = kde_density(&m, &triple([0.5; 3]));
        let expected = (1.0 / (0.1 * (2.0 * PI).sqrt())).powi(3);
        assert!((p - expected).abs() < 1e-9);
        assert!((p - 63.4936).abs() < 1e-4);

        let b = KdeModel::new(vec![[0.5; 3]], [0.1; 3], Kernel::Box).unwrap();
        assert!((kde_density(&b, &triple([0.5; 3])) - 1000.0).abs() < 1e-9);
        assert!((kde_density(&b, &triple([0.54, 0.46, 0.5])) - 1000.0).abs() < 1e-9);
        assert_eq!(kde_density(&b, &triple([0.5, 0.5, 0.5501])), 0.0);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(KdeModel::new(vec![], [0.1; 3], Kernel::Box).is_err());
        assert!(KdeModel::new(vec![[0.0; 3]], [0.1, 0.0, 0.1], Kernel::Box).is_err());
    }

    #[test]
    fn riemann_sum_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<[f64; 3]> = (0..20)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.35..0.65)))
            .collect();
        let m = KdeModel::new(samples, [0.05; 3], Kernel::Gaussian).unwrap();
        let steps = 60;
        let cell = 1.0 / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    let x = [(i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell, (k as f64 + 0.5) * cell];
                    total += kde_density(&m, &triple(x));
                }
            }
        }
        total *= cell.powi(3);
        assert!((total - 1.0).abs() < 1e-2, "integral {total}");
    }

    #[test]
    fn duplicating_samples_leaves_density_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<[f64; 3]> = (0..15).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let m = KdeModel::new(samples.clone(), [0.1; 3], Kernel::Gaussian).unwrap();
        let doubled = KdeModel::new([samples.clone(), samples].concat(), [0.1; 3], Kernel::Gaussian).unwrap();
        for _ in 0..50 {
            let x = triple(std::array::from_fn(|_| rng.random()));
            let (a, b) = (kde_density(&m, &x), kde_density(&doubled, &x));
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn gaussian_density_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<[f64; 3]> = (0..15).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let m = KdeModel::new(samples, [0.08; 3], Kernel::Gaussian).unwrap();
        for _ in 0..50 {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random());
            let p = kde_density(&m, &triple(x));
            for d in 0..3 {
                let mut y = x;
                y[d] += 1e-7;
                let q = kde_density(&m, &triple(y));
                // |∂p/∂x| is bounded by p_max / h; the step is 1e-7.
                assert!((p - q).abs() < 1e-7 * 63.5 / 0.08 * 10.0);
            }
        }
    }

    #[test]
    fn bandwidth_grid_candidates() {
        let g = BandwidthGrid::default().candidates();
        assert_eq!(g.len(), 1000);
        assert!((g[79] - 0.08).abs() < 1e-12);
        assert!((g[999] - 1.0).abs() < 1e-12);
        assert_eq!(BandwidthGrid::single(0.08).candidates(), vec![0.08]);
    }

    #[test]
    fn bandwidth_search_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<_> = (0..60).map(|_| triple(std::array::from_fn(|_| rng.random()))).collect();
        let s = grid_search_bandwidth(&data, &BandwidthGrid::single(0.08), Kernel::Gaussian, 5, 1).unwrap();
        assert_eq!(s.best_h, 0.08);
        let grid = BandwidthGrid {
            lo: 0.01,
            hi: 0.5,
            step: 0.01,
        };
        let a = grid_search_bandwidth(&data, &grid, Kernel::Gaussian, 5, 9).unwrap();
        let b = grid_search_bandwidth(&data, &grid, Kernel::Gaussian, 5, 9).unwrap();
        assert_eq!(a, b);
        let boxed = grid_search_bandwidth(&data, &grid, Kernel::Box, 5, 9).unwrap();
        assert!(boxed.best_h > 0.0);
        let empty = BandwidthGrid {
            lo: 0.5,
            hi: 0.1,
            step: 0.1,
        };
        assert!(grid_search_bandwidth(&data, &empty, Kernel::Gaussian, 5, 9).is_err());
    }

    #[test]
    fn search_score_matches_direct_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<_> = (0..30).map(|_| triple(std::array::from_fn(|_| rng.random()))).collect();
        let grid = BandwidthGrid::single(0.2);
        for kernel in [Kernel::Gaussian, Kernel::Box] {
            let s = grid_search_bandwidth(&data, &grid, kernel, 3, 6).unwrap();
            let assign = fold_assignment(data.len(), 3, 6);
            let mut score = 0.0;
            for f in 0..3 {
                let train: Vec<_> = data.iter().zip(&assign).filter(|(_, &a)| a != f).map(|(t, _)| *t).collect();
                let m = KdeModel::fit(&train, 0.2, kernel).unwrap();
                let held: Vec<_> = data.iter().zip(&assign).filter(|(_, &a)| a == f).map(|(t, _)| *t).collect();
                score += held.iter().map(|t| kde_density(&m, t).max(DENSITY_FLOOR).ln()).sum::<f64>() / held.len() as f64;
            }
            assert!((s.table[0].score - score / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conditional_point_mass_and_symmetry() {
        let samples: Vec<[f64; 3]> = (0..10).map(|i| [0.1 * i as f64, 0.5, 0.4]).collect();
        let m = KdeModel::new(samples, [0.2, 0.2, 0.01], Kernel::Gaussian).unwrap();
        let grid = uniform_grid(256);
        let h = kde_conditional(&m, 0.5, 0.5, &grid).unwrap();
        let mode = grid[h.mode_index()];
        assert!((mode - 0.4).abs() <= 0.5 / 256.0);

        let samples = vec![[0.5, 0.5, 0.3], [0.5, 0.5, 0.7], [0.4, 0.6, 0.2], [0.4, 0.6, 0.8]];
        let m = KdeModel::new(samples, [0.1; 3], Kernel::Gaussian).unwrap();
        let h = kde_conditional(&m, 0.5, 0.5, &grid).unwrap();
        let masses = h.masses();
        for j in 0..128 {
            assert!((masses[j] - masses[255 - j]).abs() < 1e-9);
        }
        assert!((h.mean() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn conditional_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<[f64; 3]> = (0..40).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let grid = uniform_grid(256);
        for kernel in [Kernel::Gaussian, Kernel::Box] {
            let m = KdeModel::new(samples.clone(), [0.3; 3], kernel).unwrap();
            let h = kde_conditional(&m, 0.4, 0.6, &grid).unwrap();
            let direct: Vec<f64> = grid.iter().map(|&c| kde_density(&m, &triple([0.4, 0.6, c]))).collect();
            let total: f64 = direct.iter().sum();
            for (a, b) in h.masses().iter().zip(&direct) {
                assert!((a - b / total).abs() < 1e-12);
            }
            assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&h.mean()));
        }
    }

    #[test]
    fn conditional_outside_support() {
        let m = KdeModel::new(vec![[0.5; 3]], [0.01; 3], Kernel::Box).unwrap();
        assert!(matches!(
            kde_conditional(&m, 0.9, 0.9, &uniform_grid(64)),
            Err(Error::OutsideSupport)
        ));
    }
}
