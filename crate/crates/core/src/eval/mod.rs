//! Error metric, leave-one-field-out evaluation and report files.

mod generative;
mod neural;
mod report;

pub use generative::{fit_fold, run_generative_cv, GenerativeCv};
pub use neural::{
    build_neural_fold, neural_examples, predict_zone, run_neural_cell, run_neural_cv, score_network, zone_targets, NeuralCell, NeuralFoldData, NeuralRun,
    NeuralSettings, ZoneTarget,
};
pub use report::{emit_report, LabelCountRow, ReportData, SelectionEntry};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::ModelTag;
use crate::nn::NetKind;

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("rmse of an empty sample".into()));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// One evaluated cell: a model (or labeler + network) on one test field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_tag: String,
    pub labeler: Option<ModelTag>,
    pub network: Option<NetKind>,
    pub input_size: Option<usize>,
    pub fold: String,
    pub rmse: Option<f64>,
    /// RMSE of the untrained network (head bias at the label mean).
    pub baseline_rmse: Option<f64>,
    pub n_test: usize,
    pub error: Option<String>,
    /// Seeds and configuration needed to re-run this cell.
    pub manifest: serde_json::Value,
}

impl EvalResult {
    fn generative(tag: ModelTag, fold: &str, manifest: serde_json::Value) -> Self {
        Self {
            model_tag: tag.as_str().to_string(),
            labeler: Some(tag),
            network: None,
            input_size: None,
            fold: fold.to_string(),
            rmse: None,
            baseline_rmse: None,
            n_test: 0,
            error: None,
            manifest,
        }
    }
}

/// Mean of the successful RMSE values, if any.
pub fn mean_rmse<'a>(rows: impl IntoIterator<Item = &'a EvalResult>) -> Option<f64> {
    let v: Vec<f64> = rows.into_iter().filter_map(|r| r.rmse).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
