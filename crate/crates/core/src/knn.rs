//! Brute-force K-nearest-neighbor regression of scaled CF on (date, ndvi).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram1D;
use crate::stats::ScaledTriple;

/// Default fold count for the k grid search.
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
}

pub fn euclidean(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl KnnModel {
    pub fn new(points: Vec<[f64; 2]>, targets: Vec<f64>, k: usize) -> Result<Self> {
        if points.is_empty() || points.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} targets",
                points.len(),
                targets.len()
            )));
        }
        if k == 0 || k > points.len() {
            return Err(Error::InvalidInput(format!(
                "k = {k} must lie in 1..={}",
                points.len()
            )));
        }
        Ok(Self { k, points, targets })
    }

    /// Fits on scaled triples: (date01, ndvi01) features, cf01 target.
    pub fn fit(data: &[ScaledTriple], k: usize) -> Result<Self> {
        Self::new(
            data.iter().map(|t| [t.date01, t.ndvi01]).collect(),
            data.iter().map(|t| t.cf01).collect(),
            k,
        )
    }

    /// Indices of the k nearest points, nearest first; equal distances keep
    /// insertion order.
    pub fn neighbors(&self, query: [f64; 2]) -> Vec<usize> {
        let mut ranked: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (euclidean(p, &query), i))
            .collect();
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < ranked.len() {
            ranked.select_nth_unstable_by(self.k - 1, by_rank);
            ranked.truncate(self.k);
        }
        ranked.sort_by(by_rank);
        ranked.into_iter().map(|(_, i)| i).collect()
    }

    /// Neighbor targets, nearest first.
    pub fn neighbor_targets(&self, date01: f64, ndvi01: f64) -> Vec<f64> {
        self.neighbors([date01, ndvi01])
            .into_iter()
            .map(|i| self.targets[i])
            .collect()
    }

    /// Empirical distribution of the neighbor targets.
    pub fn neighbor_histogram(&self, date01: f64, ndvi01: f64) -> Result<Histogram1D> {
        Histogram1D::empirical(&self.neighbor_targets(date01, ndvi01))
    }
}

/// Mean target of the k nearest stored points.
pub fn knn_predict(model: &KnnModel, date01: f64, ndvi01: f64) -> f64 {
    let targets = model.neighbor_targets(date01, ndvi01);
    targets.iter().sum::<f64>() / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearch {
    pub best_k: usize,
    pub table: Vec<KRow>,
}

/// Seeded fold index per sample: shuffle, then deal round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % folds;
    }
    assign
}

/// F-fold cross-validated RMSE for every k in `1..=k_max`; the smallest k wins ties.
pub fn grid_search_k(data: &[ScaledTriple], k_max: usize, folds: usize, seed: u64) -> Result<KSearch> {
    let n = data.len();
    if folds < 2 || n < folds {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot form {folds} folds"
        )));
    }
    let assign = fold_assignment(n, folds, seed);
    let smallest_train = (0..folds)
        .map(|f| assign.iter().filter(|&&a| a != f).count())
        .min()
        .unwrap();
    if k_max == 0 || k_max > smallest_train {
        return Err(Error::InvalidInput(format!(
            "k_max = {k_max} exceeds the smallest training fold ({smallest_train})"
        )));
    }
    let mut sq_err = vec![0.0; k_max];
    for fold in 0..folds {
        let train: Vec<ScaledTriple> = data
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a != fold)
            .map(|(t, _)| *t)
            .collect();
        let model = KnnModel::fit(&train, k_max)?;
        for (t, _) in data.iter().zip(&assign).filter(|(_, &a)| a == fold) {
            let targets = model.neighbor_targets(t.date01, t.ndvi01);
            let mut running = 0.0;
            for (j, v) in targets.iter().enumerate() {
                running += v;
                let pred = running / (j + 1) as f64;
                sq_err[j] += (pred - t.cf01).powi(2);
            }
        }
    }
    let table: Vec<KRow> = sq_err
        .iter()
        .enumerate()
        .map(|(j, s)| KRow {
            k: j + 1,
            rmse: (s / n as f64).sqrt(),
        })
        .collect();
    let best = table
        .iter()
        .fold(&table[0], |best, row| if row.rmse < best.rmse { row } else { best });
    Ok(KSearch {
        best_k: best.k,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn triple(d: f64, n: f64, c: f64) -> ScaledTriple {
        ScaledTriple {
            date01: d,
            ndvi01: n,
            cf01: c,
        }
    }

    fn random_model(n: usize, k: usize, seed: u64) -> KnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<_> = (0..n)
            .map(|_| triple(rng.random(), rng.random(), rng.random()))
            .collect();
        KnnModel::fit(&data, k).unwrap()
    }

    #[test]
    fn predict_examples() {
        let m = random_model(30, 1, 1);
        for (p, t) in m.points.iter().zip(&m.targets) {
            assert_eq!(knn_predict(&m, p[0], p[1]), *t);
        }
        let m = random_model(30, 30, 2);
        let mean = m.targets.iter().sum::<f64>() / 30.0;
        assert!((knn_predict(&m, 0.3, 0.3) - mean).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_exhaustive_sort() {
        let m = random_model(50, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q = [rng.random::<f64>(), rng.random::<f64>()];
            let mut all: Vec<(f64, usize)> = m
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt(), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let oracle = all[..3].iter().map(|(_, i)| m.targets[*i]).sum::<f64>() / 3.0;
            assert_eq!(knn_predict(&m, q[0], q[1]), oracle);
        }
    }

    #[test]
    fn ties_break_by_insertion_index() {
        let m = KnnModel::new(
            vec![[0.0, 1.0], [1.0, 0.0], [0.0, -1.0]],
            vec![0.1, 0.2, 0.3],
            2,
        )
        .unwrap();
        assert_eq!(m.neighbors([0.0, 0.0]), vec![0, 1]);
        assert!((knn_predict(&m, 0.0, 0.0) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(KnnModel::new(vec![[0.0, 0.0]], vec![0.1], 2).is_err());
        assert!(KnnModel::new(vec![], vec![], 1).is_err());
        assert!(KnnModel::new(vec![[0.0, 0.0]], vec![0.1, 0.2], 1).is_err());
    }

    #[test]
    fn prediction_stays_within_target_range() {
        let m = random_model(40, 5, 8);
        let (lo, hi) = m
            .targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = knn_predict(&m, rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5));
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn duplicate_point_keeps_k1_prediction() {
        let mut m = random_model(20, 1, 10);
        let before: Vec<f64> = m.points.iter().map(|p| knn_predict(&m, p[0], p[1])).collect();
        m.points.push(m.points[7]);
        m.targets.push(m.targets[7]);
        let after: Vec<f64> = m.points[..20].iter().map(|p| knn_predict(&m, p[0], p[1])).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn grid_search_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<_> = (0..40)
            .map(|_| triple(rng.random(), rng.random(), rng.random()))
            .collect();
        let single = grid_search_k(&data, 5, 5, 1).unwrap();
        assert_eq!(single.table.len(), 5);
        let a = grid_search_k(&data, 10, 5, 77).unwrap();
        let b = grid_search_k(&data, 10, 5, 77).unwrap();
        assert_eq!(a, b);
        assert!(grid_search_k(&data, 40, 5, 1).is_err());
        assert!(grid_search_k(&data[..3], 1, 5, 1).is_err());
    }

    /// Independent CV oracle: refits a fresh model per (fold, k) and sorts all distances.
    fn brute_cv(data: &[ScaledTriple], k_max: usize, folds: usize, seed: u64) -> Vec<f64> {
        let assign = fold_assignment(data.len(), folds, seed);
        (1..=k_max)
            .map(|k| {
                let mut se = 0.0;
                for (i, q) in data.iter().enumerate() {
                    let mut d: Vec<(f64, usize)> = data
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| assign[*j] != assign[i])
                        .map(|(j, p)| {
                            (((p.date01 - q.date01).powi(2) + (p.ndvi01 - q.ndvi01).powi(2)).sqrt(), j)
                        })
                        .collect();
                    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let pred = d[..k].iter().map(|(_, j)| data[*j].cf01).sum::<f64>() / k as f64;
                    se += (pred - q.cf01).powi(2);
                }
                (se / data.len() as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn duplicated_clusters_match_cv_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut data = Vec::new();
        for _ in 0..10 {
            let t = triple(rng.random(), rng.random(), rng.random());
            data.push(t);
            data.push(t);
        }
        let search = grid_search_k(&data, 5, 5, 3).unwrap();
        let oracle = brute_cv(&data, 5, 5, 3);
        for (row, o) in search.table.iter().zip(&oracle) {
            assert!((row.rmse - o).abs() < 1e-12);
        }
        let oracle_best = oracle
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v < oracle[b] { i } else { b })
            + 1;
        assert_eq!(search.best_k, oracle_best);
    }
}
