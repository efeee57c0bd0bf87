use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{mean_rmse, rmse, EvalResult};
use crate::error::{Error, Result};
use crate::generative::{fit_model, FitConfig, FitOutcome, ModelTag};
use crate::labeling::{count_by_field, leave_one_field_out, FoldSpec};
use crate::stats::GroundTruthSample;

/// Fits `tag` on every field except `test_field`.
pub fn fit_fold(tag: ModelTag, samples: &[GroundTruthSample], test_field: &str, config: &FitConfig) -> Result<FitOutcome> {
    let train: Vec<GroundTruthSample> = samples.iter().filter(|s| s.field_id != test_field).cloned().collect();
    if train.is_empty() {
        return Err(Error::InsufficientData(format!("no training samples outside `{test_field}`")));
    }
    fit_model(tag, &train, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeCv {
    pub folds: Vec<FoldSpec>,
    pub models: Vec<ModelTag>,
    /// Fold-major, then model order.
    pub results: Vec<EvalResult>,
    pub means: BTreeMap<ModelTag, Option<f64>>,
}

fn evaluate_cell(tag: ModelTag, samples: &[GroundTruthSample], fold: &FoldSpec, config: &FitConfig) -> EvalResult {
    let manifest = json!({
        "seed": config.seed,
        "train_fields": fold.train_fields,
        "test_field": fold.test_field,
        "fit_config": config,
    });
    let mut row = EvalResult::generative(tag, &fold.test_field, manifest);
    let test: Vec<&GroundTruthSample> = samples.iter().filter(|s| s.field_id == fold.test_field).collect();
    row.n_test = test.len();
    let outcome = fit_fold(tag, samples, &fold.test_field, config).and_then(|fit| {
        let model = fit.model;
        let mut pred = Vec::with_capacity(test.len());
        let mut truth = Vec::with_capacity(test.len());
        for s in &test {
            pred.push(model.predict_cf01(s.date, s.ndvi_mean)?);
            truth.push(model.scale.cf01_unclamped(s.cf_pa));
        }
        rmse(&pred, &truth)
    });
    match outcome {
        Ok(v) => row.rmse = Some(v),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Leave-one-field-out RMSE of each generative model, in each fold's scaled CF units.
///
/// Fitting failures are recorded on their cell and do not stop the run.
pub fn run_generative_cv(samples: &[GroundTruthSample], tags: &[ModelTag], config: &FitConfig) -> Result<GenerativeCv> {
    let counts = count_by_field(samples.iter().map(|s| s.field_id.as_str()));
    let folds = leave_one_field_out(&counts)?;
    if tags.is_empty() {
        return Err(Error::InvalidInput("no model tags to evaluate".into()));
    }
    let cells: Vec<(&FoldSpec, ModelTag)> = folds.iter().flat_map(|f| tags.iter().map(move |t| (f, *t))).collect();
    let results: Vec<EvalResult> = cells
        .par_iter()
        .map(|(fold, tag)| evaluate_cell(*tag, samples, fold, config))
        .collect();
    let means = tags
        .iter()
        .map(|t| (*t, mean_rmse(results.iter().filter(|r| r.labeler == Some(*t)))))
        .collect();
    Ok(GenerativeCv {
        folds,
        models: tags.to_vec(),
        results,
        means,
    })
}
