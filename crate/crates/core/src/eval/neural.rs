use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{rmse, EvalResult};
use crate::error::{Error, Result};
use crate::generative::{FittedModel, ModelTag};
use crate::labeling::{label_dataset, WeakLabel};
use crate::nn::{train, ArchConfig, Example, NetKind, Network, TrainConfig, TrainOutcome};
use crate::raster::{ndvi_stack, tile_and_filter, Grid, MultispectralCapture, TilingConfig, DEFAULT_WINDOW};
use crate::stats::GroundTruthSample;
use crate::synth::ZoneRecord;

/// Ground-truth CF of one zone footprint at one timestep, in the labeler's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneTarget {
    pub zone_id: String,
    pub timestep: usize,
    pub origin: (usize, usize),
    pub size: usize,
    pub cf01: f64,
}

/// Everything needed to train and score networks for one test field.
#[derive(Debug, Clone)]
pub struct NeuralFoldData {
    pub labeler: ModelTag,
    pub test_field: String,
    pub train_fields: Vec<String>,
    /// NDVI plane per timestep of the test field.
    pub ndvi: Vec<Grid>,
    pub tile_size: usize,
    pub labels: Vec<WeakLabel>,
    pub targets: Vec<ZoneTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuralCell {
    pub kind: NetKind,
    pub input_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralSettings {
    pub train: TrainConfig,
    pub channels: usize,
    pub blocks: usize,
    pub work_size: usize,
    pub hidden: usize,
    pub window: usize,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            channels: 8,
            blocks: 3,
            work_size: 8,
            hidden: 8,
            window: DEFAULT_WINDOW,
        }
    }
}

impl NeuralSettings {
    pub fn arch(&self, cell: NeuralCell) -> ArchConfig {
        let mut a = ArchConfig::new(cell.kind, cell.input_size);
        a.trunk.channels = self.channels;
        a.trunk.blocks = self.blocks;
        a.trunk.work_size = self.work_size.min(cell.input_size);
        a.hidden = self.hidden;
        a.window = self.window;
        a
    }
}

/// Maps ground-truth rows of `field` onto zone footprints and timesteps.
/// `dates` are the capture dates of the field in timestep order.
pub fn zone_targets(
    samples: &[GroundTruthSample],
    zones: &[ZoneRecord],
    field: &str,
    dates: &[chrono::NaiveDate],
    model: &FittedModel,
) -> Result<Vec<ZoneTarget>> {
    let mut out = Vec::new();
    for s in samples.iter().filter(|s| s.field_id == field) {
        let zone = zones
            .iter()
            .find(|z| z.field_id == field && z.zone_id == s.zone_id)
            .ok_or_else(|| Error::InvalidInput(format!("no footprint for zone {}/{}", field, s.zone_id)))?;
        let timestep = dates
            .iter()
            .position(|d| *d == s.date)
            .ok_or_else(|| Error::InvalidInput(format!("no capture of `{field}` on {}", s.date)))?;
        out.push(ZoneTarget {
            zone_id: s.zone_id.clone(),
            timestep,
            origin: (zone.row, zone.col),
            size: zone.size,
            cf01: model.scale.cf01_unclamped(s.cf_pa),
        });
    }
    Ok(out)
}

/// Labels the retained tiles of `captures` (one field, time-ordered) with
/// `model` and attaches the field's zone targets.
pub fn build_neural_fold(
    model: &FittedModel,
    captures: &[MultispectralCapture],
    tiling: &TilingConfig,
    samples: &[GroundTruthSample],
    zones: &[ZoneRecord],
    base_seed: u64,
) -> Result<NeuralFoldData> {
    let planes = ndvi_stack(captures)?;
    let field = captures
        .first()
        .map(|c| c.field_id.clone())
        .ok_or_else(|| Error::InsufficientData("no captures".into()))?;
    let tiles: Vec<_> = planes.iter().flat_map(|p| tile_and_filter(p, tiling)).collect();
    let labels = label_dataset(model, &tiles, base_seed)?.labels;
    let dates: Vec<chrono::NaiveDate> = captures.iter().map(|c| c.timestamp).collect();
    let targets = zone_targets(samples, zones, &field, &dates, model)?;
    Ok(NeuralFoldData {
        labeler: model.tag(),
        test_field: field,
        train_fields: model.train_fields.clone(),
        ndvi: planes.into_iter().map(|p| p.values).collect(),
        tile_size: tiling.size,
        labels,
        targets,
    })
}

fn sub_offsets(tile: usize, input: usize) -> Result<Vec<(usize, usize)>> {
    if input == 0 || tile % input != 0 {
        return Err(Error::InvalidInput(format!(
            "input size {input} does not divide tile size {tile}"
        )));
    }
    let n = tile / input;
    Ok((0..n).flat_map(|i| (0..n).map(move |j| (i * input, j * input))).collect())
}

fn patch(plane: &Grid, origin: (usize, usize), off: (usize, usize), size: usize) -> Vec<f64> {
    plane.window(origin.0 + off.0, origin.1 + off.1, size).into_vec()
}

/// Training examples from the weak labels of one field. Each labeled tile is
/// cut into `(tile / size)²` patches that inherit its label; series use every
/// run of `window` consecutive labeled timesteps at one origin.
pub fn neural_examples(data: &NeuralFoldData, cell: NeuralCell, window: usize) -> Result<Vec<Example>> {
    let offsets = sub_offsets(data.tile_size, cell.input_size)?;
    let mut labels: Vec<&WeakLabel> = data.labels.iter().filter(|l| l.field == data.test_field).collect();
    labels.sort_by_key(|l| (l.timestep, l.origin));
    let mut out = Vec::new();
    match cell.kind {
        NetKind::Cnn => {
            for l in labels {
                let plane = data.ndvi.get(l.timestep).ok_or_else(|| timestep_err(l.timestep))?;
                for off in &offsets {
                    out.push(Example {
                        inputs: vec![patch(plane, (l.origin[0], l.origin[1]), *off, cell.input_size)],
                        targets: vec![l.cf01],
                    });
                }
            }
        }
        NetKind::Bilstm => {
            let by_key: BTreeMap<((usize, usize), usize), f64> = labels
                .iter()
                .map(|l| (((l.origin[0], l.origin[1]), l.timestep), l.cf01))
                .collect();
            let origins: BTreeSet<(usize, usize)> = by_key.keys().map(|k| k.0).collect();
            let steps = data.ndvi.len();
            for start in 0..=steps.saturating_sub(window) {
                if steps < window {
                    break;
                }
                for &origin in &origins {
                    let targets: Option<Vec<f64>> = (start..start + window).map(|t| by_key.get(&(origin, t)).copied()).collect();
                    let Some(targets) = targets else { continue };
                    for off in &offsets {
                        out.push(Example {
                            inputs: (start..start + window)
                                .map(|t| patch(&data.ndvi[t], origin, *off, cell.input_size))
                                .collect(),
                            targets: targets.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn timestep_err(t: usize) -> Error {
    Error::InvalidInput(format!("label refers to missing timestep {t}"))
}

/// Network estimate of a zone's scaled CF: mean over its patches (and, for
/// series models, over every window that covers the timestep).
pub fn predict_zone(net: &Network, params: &[f64], data: &NeuralFoldData, target: &ZoneTarget) -> Result<f64> {
    let size = net.arch.trunk.input_size;
    let offsets = sub_offsets(target.size, size)?;
    let mut acc = Vec::new();
    match net.arch.kind {
        NetKind::Cnn => {
            let plane = data.ndvi.get(target.timestep).ok_or_else(|| timestep_err(target.timestep))?;
            for off in &offsets {
                acc.push(net.predict(params, &[patch(plane, target.origin, *off, size)])?[0]);
            }
        }
        NetKind::Bilstm => {
            let l = net.arch.window;
            let steps = data.ndvi.len();
            if steps < l {
                return Err(Error::InsufficientData(format!("{steps} timesteps for a window of {l}")));
            }
            let first = target.timestep.saturating_sub(l - 1);
            let last = target.timestep.min(steps - l);
            for start in first..=last {
                for off in &offsets {
                    let inputs: Vec<Vec<f64>> = (start..start + l)
                        .map(|t| patch(&data.ndvi[t], target.origin, *off, size))
                        .collect();
                    acc.push(net.predict(params, &inputs)?[target.timestep - start]);
                }
            }
        }
    }
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// RMSE of the network's zone estimates against `data.targets`.
pub fn score_network(net: &Network, params: &[f64], data: &NeuralFoldData) -> Result<f64> {
    let pred: Vec<f64> = data
        .targets
        .par_iter()
        .map(|t| predict_zone(net, params, data, t))
        .collect::<Result<_>>()?;
    let truth: Vec<f64> = data.targets.iter().map(|t| t.cf01).collect();
    rmse(&pred, &truth)
}

/// A trained cell: the scored result plus the network and its outcome.
#[derive(Debug, Clone)]
pub struct NeuralRun {
    pub result: EvalResult,
    pub trained: Option<(Network, TrainOutcome)>,
}

/// Trains one network on the test field's weak labels and scores it on the
/// field's ground-truth zones. Failures are recorded on the result.
pub fn run_neural_cell(data: &NeuralFoldData, cell: NeuralCell, settings: &NeuralSettings) -> NeuralRun {
    let arch = settings.arch(cell);
    let mut result = EvalResult {
        model_tag: format!("{}+{}@{}", data.labeler, cell.kind, cell.input_size),
        labeler: Some(data.labeler),
        network: Some(cell.kind),
        input_size: Some(cell.input_size),
        fold: data.test_field.clone(),
        rmse: None,
        baseline_rmse: None,
        n_test: data.targets.len(),
        error: None,
        manifest: json!({
            "seed": settings.train.seed,
            "train_fields": data.train_fields,
            "test_field": data.test_field,
            "labels": data.labels.len(),
            "architecture": arch,
            "settings": settings,
        }),
    };
    let outcome = (|| {
        let net = Network::new(arch)?;
        let examples = neural_examples(data, cell, settings.window)?;
        let baseline = train(&net, &examples, &TrainConfig { epochs: 0, ..settings.train.clone() })?;
        let base_rmse = score_network(&net, &baseline.params, data)?;
        let trained = train(&net, &examples, &settings.train)?;
        let r = score_network(&net, &trained.params, data)?;
        Ok::<_, Error>((net, trained, base_rmse, r))
    })();
    match outcome {
        Ok((net, trained, base, r)) => {
            result.rmse = Some(r);
            result.baseline_rmse = Some(base);
            NeuralRun {
                result,
                trained: Some((net, trained)),
            }
        }
        Err(e) => {
            result.error = Some(e.to_string());
            NeuralRun { result, trained: None }
        }
    }
}

/// Every (fold × cell) combination, fold-major.
pub fn run_neural_cv(folds: &[NeuralFoldData], cells: &[NeuralCell], settings: &NeuralSettings) -> Vec<EvalResult> {
    folds
        .iter()
        .flat_map(|f| cells.iter().map(move |c| (f, *c)))
        .map(|(f, c)| run_neural_cell(f, c, settings).result)
        .collect()
}
