//! Full-covariance Gaussian mixtures over scaled (date, ndvi, cf) triples.
//!
//! Fitting is plain expectation-maximization with k-means++ seeding and a
//! diagonal ridge on every covariance. Component counts are compared with
//! BIC/AIC, and [`gmm_conditional`] slices the joint density at a fixed
//! (date, ndvi) using closed-form Gaussian conditioning.

use std::f64::consts::PI;

use nalgebra::{Cholesky, Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram1D;
use crate::stats::ScaledTriple;

const DIM: usize = 3;
/// Conditioning points whose marginal density falls below this are rejected.
pub const SUPPORT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the relative log-likelihood gain drops below this.
    pub tol: f64,
    /// Ridge added to every covariance diagonal.
    pub reg: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            reg: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

impl GaussianComponent {
    fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.mean)
    }

    fn cov_mat(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.cov[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood after initialization and after every EM iteration.
    pub fit_log: Vec<f64>,
}

/// Precomputed evaluation form of one component.
struct Prepared {
    log_weight: f64,
    mean: Vector3<f64>,
    chol: Cholesky<f64, nalgebra::U3>,
    log_norm: f64,
}

impl Prepared {
    fn new(c: &GaussianComponent) -> Result<Self> {
        let chol = Cholesky::new(c.cov_mat()).ok_or_else(|| {
            Error::InvalidInput("component covariance is not positive definite".into())
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            log_weight: c.weight.ln(),
            mean: c.mean_vec(),
            log_norm: -0.5 * (DIM as f64 * (2.0 * PI).ln() + log_det),
            chol,
        })
    }

    fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.mean;
        let z = self.chol.l().solve_lower_triangular(&d).expect("nonsingular factor");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn prepare(model: &GmmModel) -> Result<Vec<Prepared>> {
    model.components.iter().map(Prepared::new).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mixture density at `x`.
pub fn gmm_pdf(model: &GmmModel, x: &ScaledTriple) -> f64 {
    let prepared = prepare(model).expect("fitted components are SPD");
    let x = Vector3::from(x.to_array());
    prepared
        .iter()
        .map(|p| (p.log_weight + p.log_density(&x)).exp())
        .sum()
}

/// Total log-likelihood of `data` under `model`.
pub fn log_likelihood(model: &GmmModel, data: &[ScaledTriple]) -> f64 {
    let prepared = prepare(model).expect("fitted components are SPD");
    let mut terms = vec![0.0; prepared.len()];
    data.iter()
        .map(|t| {
            let x = Vector3::from(t.to_array());
            for (slot, p) in terms.iter_mut().zip(&prepared) {
                *slot = p.log_weight + p.log_density(&x);
            }
            log_sum_exp(&terms)
        })
        .sum()
}

/// Free parameters of a full-covariance mixture with `components` components in `dim` dimensions.
pub fn parameter_count(components: usize, dim: usize) -> usize {
    (components - 1) + components * dim + components * dim * (dim + 1) / 2
}

pub fn bic_score(k: usize, n: f64, log_l: f64) -> f64 {
    k as f64 * n.ln() - 2.0 * log_l
}

pub fn aic_score(k: usize, log_l: f64) -> f64 {
    2.0 * k as f64 - 2.0 * log_l
}

pub fn bic(model: &GmmModel, data: &[ScaledTriple]) -> f64 {
    let k = parameter_count(model.components.len(), DIM);
    bic_score(k, data.len() as f64, log_likelihood(model, data))
}

pub fn aic(model: &GmmModel, data: &[ScaledTriple]) -> f64 {
    let k = parameter_count(model.components.len(), DIM);
    aic_score(k, log_likelihood(model, data))
}

fn to_vectors(data: &[ScaledTriple]) -> Vec<Vector3<f64>> {
    data.iter().map(|t| Vector3::from(t.to_array())).collect()
}

/// k-means++ seeding of `c` centers.
fn seed_means(xs: &[Vector3<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).norm_squared()).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..xs.len())
        };
        centers.push(xs[next]);
        for (slot, x) in d2.iter_mut().zip(xs) {
            *slot = slot.min((x - xs[next]).norm_squared());
        }
    }
    centers
}

fn pooled_covariance(xs: &[Vector3<f64>], reg: f64) -> Matrix3<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(Vector3::zeros(), |acc, x| acc + x) / n;
    let mut cov = Matrix3::zeros();
    for x in xs {
        let d = x - mean;
        cov += d * d.transpose();
    }
    cov / n + Matrix3::identity() * reg
}

fn to_component(weight: f64, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> GaussianComponent {
    let sym = (cov + cov.transpose()) * 0.5;
    GaussianComponent {
        weight,
        mean: [mean[0], mean[1], mean[2]],
        cov: std::array::from_fn(|r| std::array::from_fn(|c| sym[(r, c)])),
    }
}

/// E-step: fills `resp` (row-major N×C) and returns the log-likelihood.
fn expectation(model: &GmmModel, xs: &[Vector3<f64>], resp: &mut [f64]) -> Result<f64> {
    let prepared = prepare(model)?;
    let c = prepared.len();
    let mut ll = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let row = &mut resp[i * c..(i + 1) * c];
        for (slot, p) in row.iter_mut().zip(&prepared) {
            *slot = p.log_weight + p.log_density(x);
        }
        let lse = log_sum_exp(row);
        for slot in row.iter_mut() {
            *slot = (*slot - lse).exp();
        }
        ll += lse;
    }
    Ok(ll)
}

fn maximization(previous: &GmmModel, xs: &[Vector3<f64>], resp: &[f64], reg: f64) -> GmmModel {
    let c = previous.components.len();
    let mut counts = vec![0.0; c];
    let mut means = vec![Vector3::zeros(); c];
    for (i, x) in xs.iter().enumerate() {
        for k in 0..c {
            let r = resp[i * c + k];
            counts[k] += r;
            means[k] += x * r;
        }
    }
    let mut covs = vec![Matrix3::zeros(); c];
    for k in 0..c {
        if counts[k] > 0.0 {
            means[k] /= counts[k];
        }
    }
    for (i, x) in xs.iter().enumerate() {
        for k in 0..c {
            let d = x - means[k];
            covs[k] += d * d.transpose() * resp[i * c + k];
        }
    }
    let total: f64 = counts.iter().sum();
    let components = (0..c)
        .map(|k| {
            if counts[k] < 1e-12 {
                // Collapsed component: keep its previous shape with a negligible weight.
                let mut kept = previous.components[k].clone();
                kept.weight = counts[k].max(1e-300) / total;
                kept
            } else {
                let cov = covs[k] / counts[k] + Matrix3::identity() * reg;
                to_component(counts[k] / total, &means[k], &cov)
            }
        })
        .collect::<Vec<_>>();
    let wsum: f64 = components.iter().map(|c| c.weight).sum();
    GmmModel {
        components: components
            .into_iter()
            .map(|mut comp| {
                comp.weight /= wsum;
                comp
            })
            .collect(),
        fit_log: Vec::new(),
    }
}

/// Fits a `components`-component mixture by EM.
pub fn fit_em(data: &[ScaledTriple], components: usize, config: &EmConfig) -> Result<GmmModel> {
    if data.is_empty() {
        return Err(Error::InsufficientData("no data to fit".into()));
    }
    if components == 0 || data.len() < components {
        return Err(Error::InsufficientData(format!(
            "{} points cannot support {components} components",
            data.len()
        )));
    }
    let xs = to_vectors(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pooled = pooled_covariance(&xs, config.reg);
    let weight = 1.0 / components as f64;
    let mut model = GmmModel {
        components: seed_means(&xs, components, &mut rng)
            .iter()
            .map(|m| to_component(weight, m, &pooled))
            .collect(),
        fit_log: Vec::new(),
    };
    let mut resp = vec![0.0; xs.len() * components];
    let mut trace = vec![expectation(&model, &xs, &mut resp)?];
    for _ in 0..config.max_iter {
        let next = maximization(&model, &xs, &resp, config.reg);
        let mut next_resp = vec![0.0; resp.len()];
        let ll = expectation(&next, &xs, &mut next_resp)?;
        let prev = *trace.last().unwrap();
        if ll < prev {
            // No progress; keep the better parameters.
            break;
        }
        model = next;
        resp = next_resp;
        trace.push(ll);
        if ll - prev < config.tol * prev.abs() {
            break;
        }
    }
    model.fit_log = trace;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub components: usize,
    pub bic: f64,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best: usize,
    pub table: SelectionTable,
    pub model: GmmModel,
}

fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Fits every candidate count and picks the one minimizing the mean of
/// min-max normalized BIC and AIC (ties go to fewer components).
pub fn select_components(
    data: &[ScaledTriple],
    candidates: &[usize],
    config: &EmConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate component counts".into()));
    }
    let fits: Vec<GmmModel> = candidates
        .par_iter()
        .map(|&c| fit_em(data, c, config))
        .collect::<Result<_>>()?;
    let rows: Vec<SelectionRow> = candidates
        .iter()
        .zip(&fits)
        .map(|(&c, m)| SelectionRow {
            components: c,
            bic: bic(m, data),
            aic: aic(m, data),
        })
        .collect();
    let nb = minmax_normalize(&rows.iter().map(|r| r.bic).collect::<Vec<_>>());
    let na = minmax_normalize(&rows.iter().map(|r| r.aic).collect::<Vec<_>>());
    let mut best = 0;
    for i in 1..rows.len() {
        let score = |j: usize| 0.5 * (nb[j] + na[j]);
        let better = score(i) < score(best)
            || (score(i) == score(best) && rows[i].components < rows[best].components);
        if better {
            best = i;
        }
    }
    Ok(Selection {
        best: rows[best].components,
        model: fits[best].clone(),
        table: SelectionTable { rows },
    })
}

/// Conditional CF distribution at fixed (date01, ndvi01), evaluated on `cf_grid`.
pub fn gmm_conditional(
    model: &GmmModel,
    date01: f64,
    ndvi01: f64,
    cf_grid: &[f64],
) -> Result<Histogram1D> {
    let a = Vector2::new(date01, ndvi01);
    let mut log_w = Vec::with_capacity(model.components.len());
    let mut conds = Vec::with_capacity(model.components.len());
    for comp in &model.components {
        let s = &comp.cov;
        let s_aa = Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1]);
        let s_ca = Vector2::new(s[2][0], s[2][1]);
        let inv = s_aa.try_inverse().ok_or_else(|| {
            Error::InvalidInput("singular (date, ndvi) covariance block".into())
        })?;
        let d = a - Vector2::new(comp.mean[0], comp.mean[1]);
        let gain = inv * s_ca;
        let mean = comp.mean[2] + gain.dot(&d);
        let var = (s[2][2] - s_ca.dot(&gain)).max(f64::MIN_POSITIVE);
        let quad = d.dot(&(inv * d));
        let log_marginal = -0.5 * (2.0 * (2.0 * PI).ln() + s_aa.determinant().ln() + quad);
        log_w.push(comp.weight.ln() + log_marginal);
        conds.push((mean, var));
    }
    let log_total = log_sum_exp(&log_w);
    if !(log_total >= SUPPORT_FLOOR.ln()) {
        return Err(Error::OutsideSupport);
    }
    let weights: Vec<f64> = cf_grid
        .iter()
        .map(|&cf| {
            log_w
                .iter()
                .zip(&conds)
                .map(|(lw, (m, v))| {
                    let z = cf - m;
                    (lw - log_total - 0.5 * (2.0 * PI * v).ln() - 0.5 * z * z / v).exp()
                })
                .sum()
        })
        .collect();
    Histogram1D::from_weights(cf_grid.to_vec(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::uniform_grid;
    use rand_distr::{Distribution, Normal};

    fn triple(x: [f64; 3]) -> ScaledTriple {
        ScaledTriple {
            date01: x[0],
            ndvi01: x[1],
            cf01: x[2],
        }
    }

    fn random_data(n: usize, seed: u64) -> Vec<ScaledTriple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| triple([rng.random(), rng.random(), rng.random()]))
            .collect()
    }

    fn single(mean: [f64; 3], cov: [[f64; 3]; 3]) -> GmmModel {
        GmmModel {
            components: vec![GaussianComponent {
                weight: 1.0,
                mean,
                cov,
            }],
            fit_log: vec![],
        }
    }

    #[test]
    fn one_component_recovers_sample_moments() {
        let data = random_data(150, 3);
        let cfg = EmConfig::default();
        let m = fit_em(&data, 1, &cfg).unwrap();
        let n = data.len() as f64;
        let mean: [f64; 3] =
            std::array::from_fn(|d| data.iter().map(|t| t.to_array()[d]).sum::<f64>() / n);
        for d in 0..3 {
            assert!((m.components[0].mean[d] - mean[d]).abs() < 1e-8);
            for e in 0..3 {
                let cov = data
                    .iter()
                    .map(|t| (t.to_array()[d] - mean[d]) * (t.to_array()[e] - mean[e]))
                    .sum::<f64>()
                    / n
                    + if d == e { cfg.reg } else { 0.0 };
                assert!((m.components[0].cov[d][e] - cov).abs() < 1e-8);
            }
        }
        assert_eq!(m.components[0].weight, 1.0);
    }

    #[test]
    fn two_clusters_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let centers = [[0.2; 3], [0.8; 3]];
        let data: Vec<ScaledTriple> = (0..400)
            .map(|i| {
                let c = centers[i % 2];
                triple(std::array::from_fn(|d| c[d] + noise.sample(&mut rng)))
            })
            .collect();
        let m = fit_em(&data, 2, &EmConfig::default()).unwrap();
        // Oracle: nearest-center assignment means of the same draw.
        for c in centers {
            let members: Vec<_> = data
                .iter()
                .filter(|t| {
                    let x = t.to_array();
                    let d0: f64 = (0..3).map(|d| (x[d] - c[d]).powi(2)).sum();
                    let other = if c[0] < 0.5 { [0.8; 3] } else { [0.2; 3] };
                    let d1: f64 = (0..3).map(|d| (x[d] - other[d]).powi(2)).sum();
                    d0 < d1
                })
                .collect();
            let oracle: [f64; 3] = std::array::from_fn(|d| {
                members.iter().map(|t| t.to_array()[d]).sum::<f64>() / members.len() as f64
            });
            let hit = m.components.iter().any(|comp| {
                (0..3).all(|d| (comp.mean[d] - c[d]).abs() < 0.01 && (comp.mean[d] - oracle[d]).abs() < 1e-3)
            });
            assert!(hit, "no component near {c:?}: {:?}", m.components);
        }
    }

    #[test]
    fn fit_preconditions() {
        assert!(fit_em(&random_data(2, 0), 3, &EmConfig::default()).is_err());
        assert!(fit_em(&[], 1, &EmConfig::default()).is_err());
    }

    #[test]
    fn fit_is_reproducible_and_monotone() {
        let data = random_data(120, 5);
        let cfg = EmConfig {
            seed: 42,
            ..Default::default()
        };
        let a = fit_em(&data, 3, &cfg).unwrap();
        let b = fit_em(&data, 3, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.fit_log.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        let wsum: f64 = a.components.iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-12);
        for c in &a.components {
            let eig = c.cov_mat().symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e >= cfg.reg * (1.0 - 1e-9)));
        }
        assert!((log_likelihood(&a, &data) - a.fit_log.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn pdf_closed_forms() {
        // Unit variance in the first axis, tiny elsewhere: the density at the
        // mean factors into 1/sqrt(2π) times the other two axes' peaks.
        let s = 0.1f64;
        let m = single([0.0; 3], [[1.0, 0.0, 0.0], [0.0, s * s, 0.0], [0.0, 0.0, s * s]]);
        let p = gmm_pdf(&m, &triple([0.0; 3]));
        let other = 1.0 / (s * (2.0 * PI).sqrt());
        assert!((p / (other * other) - 0.398942).abs() < 1e-6);

        let comp = GaussianComponent {
            weight: 0.5,
            mean: [0.3, 0.4, 0.5],
            cov: [[0.02, 0.005, 0.0], [0.005, 0.03, 0.001], [0.0, 0.001, 0.01]],
        };
        let mixed = GmmModel {
            components: vec![comp.clone(), comp.clone()],
            fit_log: vec![],
        };
        let one = GmmModel {
            components: vec![GaussianComponent { weight: 1.0, ..comp }],
            fit_log: vec![],
        };
        for x in [[0.3, 0.4, 0.5], [0.1, 0.9, 0.2], [0.6, 0.6, 0.6]] {
            let (a, b) = (gmm_pdf(&mixed, &triple(x)), gmm_pdf(&one, &triple(x)));
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn information_criteria_closed_forms() {
        assert!((bic_score(2, 2f64.exp(), 0.0) - 4.0).abs() < 1e-12);
        assert_eq!(aic_score(3, 1.0), 4.0);
        assert_eq!(parameter_count(1, 3), 9);
        assert_eq!(parameter_count(3, 3), 29);
    }

    #[test]
    fn selection_table_shape() {
        let data = random_data(100, 9);
        let sel = select_components(&data, &[2], &EmConfig::default()).unwrap();
        assert_eq!(sel.best, 2);
        assert_eq!(sel.table.rows.len(), 1);
        let sel = select_components(&data, &[1, 2, 3, 4, 5], &EmConfig::default()).unwrap();
        assert_eq!(sel.table.rows.len(), 5);
        assert!((1..=5).contains(&sel.best));
        assert!(select_components(&data, &[], &EmConfig::default()).is_err());
    }

    #[test]
    fn bic_prefers_one_component_for_gaussian_data() {
        let mut votes = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noise = Normal::new(0.5, 0.1).unwrap();
            let data: Vec<_> = (0..200)
                .map(|_| triple(std::array::from_fn(|_| noise.sample(&mut rng))))
                .collect();
            let cfg = EmConfig {
                seed,
                ..Default::default()
            };
            let sel = select_components(&data, &[1, 2, 3], &cfg).unwrap();
            let argmin = sel
                .table
                .rows
                .iter()
                .min_by(|a, b| a.bic.total_cmp(&b.bic))
                .unwrap()
                .components;
            votes += usize::from(argmin == 1);
        }
        assert!(votes > 10, "BIC chose C=1 in only {votes}/20 runs");
    }

    #[test]
    fn conditional_independent_axes_keep_cf_mean() {
        let m = single([0.3, 0.7, 0.45], [[0.01, 0.0, 0.0], [0.0, 0.02, 0.0], [0.0, 0.0, 0.004]]);
        let grid = uniform_grid(256);
        for (d, n) in [(0.3, 0.7), (0.1, 0.2), (0.5, 0.9)] {
            let h = gmm_conditional(&m, d, n, &grid).unwrap();
            assert!((h.mean() - 0.45).abs() < 1e-6);
        }
    }

    #[test]
    fn conditional_mean_matches_gaussian_regression() {
        let (sx, sc, rho) = (0.1, 0.05, 0.6);
        let m = single(
            [0.5, 0.5, 0.5],
            [[0.01, 0.0, 0.0], [0.0, sx * sx, rho * sx * sc], [0.0, rho * sx * sc, sc * sc]],
        );
        let grid = uniform_grid(4096);
        let x = 0.6;
        let h = gmm_conditional(&m, 0.5, x, &grid).unwrap();
        let expected = 0.5 + rho * (sc / sx) * (x - 0.5);
        assert!((h.mean() - expected).abs() < 1e-6, "{} vs {expected}", h.mean());
    }

    #[test]
    fn conditional_matches_density_slice() {
        let data = random_data(200, 21);
        let m = fit_em(&data, 3, &EmConfig::default()).unwrap();
        let grid = uniform_grid(256);
        for (d, n) in [(0.2, 0.3), (0.5, 0.5), (0.8, 0.1)] {
            let h = gmm_conditional(&m, d, n, &grid).unwrap();
            let slice: Vec<f64> = grid.iter().map(|&c| gmm_pdf(&m, &triple([d, n, c]))).collect();
            let total: f64 = slice.iter().sum();
            for (a, b) in h.masses().iter().zip(&slice) {
                assert!((a - b / total).abs() < 1e-6);
            }
            assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conditional_outside_support() {
        let m = single([0.5; 3], [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]]);
        assert!(matches!(
            gmm_conditional(&m, 1e6, 0.5, &uniform_grid(16)),
            Err(Error::OutsideSupport)
        ));
    }

    #[test]
    fn model_json_layout() {
        let m = single([0.1, 0.2, 0.3], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["components"][0]["mean"][2], 0.3);
        assert_eq!(v["components"][0]["cov"][1][1], 1.0);
        assert!(v["fit_log"].is_array());
    }
}
