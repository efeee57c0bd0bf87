//! Fitted generative labelers behind one interface, and the per-model
//! hyperparameter procedures (component count, k, bandwidth).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, EmConfig, GmmModel, SelectionTable};
use crate::histogram::{uniform_grid, Histogram1D, DEFAULT_CF_BINS};
use crate::kde::{self, BandwidthGrid, BandwidthSearch, KdeModel, Kernel};
use crate::knn::{self, KSearch, KnnModel};
use crate::stats::{field_ids, fit_scale, GroundTruthSample, ScaleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Gmm,
    Knn,
    Kde,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::Gmm, ModelTag::Knn, ModelTag::Kde];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Gmm => "gmm",
            ModelTag::Knn => "knn",
            ModelTag::Kde => "kde",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelTag::Gmm => "GMM",
            ModelTag::Knn => "K-NN",
            ModelTag::Kde => "KDE",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(ModelTag::Gmm),
            "knn" => Ok(ModelTag::Knn),
            "kde" => Ok(ModelTag::Kde),
            other => Err(Error::InvalidInput(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Estimator {
    Gmm(GmmModel),
    Knn(KnnModel),
    Kde(KdeModel),
}

/// A generative model together with the scale and fields it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub scale: ScaleParams,
    pub train_fields: Vec<String>,
    pub cf_bins: usize,
    #[serde(flatten)]
    pub estimator: Estimator,
}

impl FittedModel {
    pub fn tag(&self) -> ModelTag {
        match self.estimator {
            Estimator::Gmm(_) => ModelTag::Gmm,
            Estimator::Knn(_) => ModelTag::Knn,
            Estimator::Kde(_) => ModelTag::Kde,
        }
    }

    /// Conditional distribution of scaled CF at a raw (date, ndvi).
    pub fn conditional(&self, date: NaiveDate, ndvi: f64) -> Result<Histogram1D> {
        let (d, n) = (self.scale.date01(date), self.scale.ndvi01(ndvi));
        match &self.estimator {
            Estimator::Gmm(m) => gmm::gmm_conditional(m, d, n, &uniform_grid(self.cf_bins)),
            Estimator::Kde(m) => kde::kde_conditional(m, d, n, &uniform_grid(self.cf_bins)),
            Estimator::Knn(m) => m.neighbor_histogram(d, n),
        }
    }

    /// Point estimate of scaled CF: conditional mean (GMM/KDE) or neighbor mean (K-NN).
    pub fn predict_cf01(&self, date: NaiveDate, ndvi: f64) -> Result<f64> {
        match &self.estimator {
            Estimator::Knn(m) => Ok(knn::knn_predict(
                m,
                self.scale.date01(date),
                self.scale.ndvi01(ndvi),
            )),
            _ => Ok(self.conditional(date, ndvi)?.mean()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Hyperparameter search settings for all three labelers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub em: EmConfig,
    pub components: Vec<usize>,
    /// Upper end of the k grid; clipped to the smallest training fold.
    pub k_max: usize,
    pub folds: usize,
    pub bandwidth_grid: BandwidthGrid,
    pub kernel: Kernel,
    pub cf_bins: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            components: (1..=5).collect(),
            k_max: 15,
            folds: knn::DEFAULT_FOLDS,
            bandwidth_grid: BandwidthGrid::default(),
            kernel: Kernel::default(),
            cf_bins: DEFAULT_CF_BINS,
            seed: 0,
        }
    }
}

/// The hyperparameter table produced while fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum SelectionReport {
    Gmm { best: usize, table: SelectionTable },
    Knn(KSearch),
    Kde(BandwidthSearch),
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: FittedModel,
    pub selection: SelectionReport,
}

/// Runs the model's selection procedure on `samples` and refits on all of them.
pub fn fit_model(tag: ModelTag, samples: &[GroundTruthSample], config: &FitConfig) -> Result<FitOutcome> {
    let scale = fit_scale(samples)?;
    let data = scale.apply_all(samples);
    let train_fields = field_ids(samples);
    let em = EmConfig {
        seed: config.seed ^ config.em.seed,
        ..config.em
    };
    let (estimator, selection) = match tag {
        ModelTag::Gmm => {
            let sel = gmm::select_components(&data, &config.components, &em)?;
            (
                Estimator::Gmm(sel.model),
                SelectionReport::Gmm {
                    best: sel.best,
                    table: sel.table,
                },
            )
        }
        ModelTag::Knn => {
            let folds = config.folds;
            let smallest_train = data.len() - data.len().div_ceil(folds.max(1));
            let search = knn::grid_search_k(&data, config.k_max.min(smallest_train), folds, config.seed)?;
            let model = KnnModel::fit(&data, search.best_k)?;
            (Estimator::Knn(model), SelectionReport::Knn(search))
        }
        ModelTag::Kde => {
            let search = kde::grid_search_bandwidth(
                &data,
                &config.bandwidth_grid,
                config.kernel,
                config.folds,
                config.seed,
            )?;
            let model = KdeModel::fit(&data, search.best_h, config.kernel)?;
            (Estimator::Kde(model), SelectionReport::Kde(search))
        }
    };
    Ok(FitOutcome {
        model: FittedModel {
            scale,
            train_fields,
            cf_bins: config.cf_bins,
            estimator,
        },
        selection,
    })
}
