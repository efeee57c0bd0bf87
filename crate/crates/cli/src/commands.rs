use std::collections::BTreeMap;
use std::path::Path;

use chlorolab_core::eval::{
    emit_report, fit_fold, neural_examples, run_generative_cv, score_network, zone_targets, EvalResult, GenerativeCv,
    LabelCountRow, NeuralCell, NeuralFoldData, ReportData, SelectionEntry,
};
use chlorolab_core::generative::SelectionReport;
use chlorolab_core::labeling::{
    count_by_field, label_dataset, leave_one_field_out, read_labels_jsonl, write_labels_jsonl, write_skip_report,
};
use chlorolab_core::nn::{load_weights, save_weights, train as train_network, NetKind, Network, TrainConfig};
use chlorolab_core::raster::{load_capture_tree, ndvi_stack, tile_and_filter};
use chlorolab_core::stats::read_ground_truth;
use chlorolab_core::synth::{generate, read_zones, write_bundle};
use chlorolab_core::{Error, FittedModel, FoldSpec, GroundTruthSample, ModelTag, MultispectralCapture};
use serde_json::{json, Value};

use crate::stages::{file_digest, read_json, tree_digest, write_json, Stage};
use crate::{CliError, RunConfig, EXIT_EVAL, EXIT_FIT, EXIT_INFEASIBLE, EXIT_LABEL, EXIT_TRAIN};

fn err(code: i32) -> impl Fn(Error) -> CliError {
    move |e| CliError::new(code, e.to_string())
}

fn io_err(code: i32, what: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(code, format!("{}: {e}", what.display()))
}

pub fn simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let bundle = generate(&cfg.synth).map_err(err(EXIT_INFEASIBLE))?;
    let dir = cfg.paths.synth_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io_err(EXIT_INFEASIBLE, &dir))?;
    }
    write_bundle(&bundle, &dir).map_err(err(EXIT_INFEASIBLE))?;
    Ok(json!({
        "dir": dir,
        "fields": bundle.captures.keys().collect::<Vec<_>>(),
        "timesteps": cfg.synth.timesteps,
        "ground_truth_rows": bundle.ground_truth.len(),
        "digest": tree_digest(&dir).map_err(io_err(EXIT_INFEASIBLE, &dir))?,
    }))
}

struct GroundTruth {
    samples: Vec<GroundTruthSample>,
    digest: String,
    folds: Vec<FoldSpec>,
}

fn ground_truth(cfg: &RunConfig, code: i32) -> Result<GroundTruth, CliError> {
    let path = cfg.paths.ground_truth();
    let samples = read_ground_truth(&path).map_err(err(code))?;
    let digest = file_digest(&path).map_err(io_err(code, &path))?;
    let mut folds = leave_one_field_out(&count_by_field(samples.iter().map(|s| s.field_id.as_str()))).map_err(err(code))?;
    if !cfg.test_fields.is_empty() {
        if let Some(f) = cfg.test_fields.iter().find(|f| !folds.iter().any(|x| &x.test_field == *f)) {
            return Err(CliError::new(code, format!("test field `{f}` has no ground truth")));
        }
        folds.retain(|f| cfg.test_fields.contains(&f.test_field));
    }
    Ok(GroundTruth { samples, digest, folds })
}

fn fit_stage(cfg: &RunConfig, tag: ModelTag, gt: &GroundTruth) -> Stage {
    Stage::new(
        &cfg.paths.out.join("fit"),
        tag.as_str(),
        json!({"stage": "fit", "model": tag, "fit": cfg.fit, "ground_truth": gt.digest, "folds": gt.folds}),
    )
}

fn selection_summary(sel: &SelectionReport) -> Value {
    match sel {
        SelectionReport::Gmm { best, .. } => json!({"components": best}),
        SelectionReport::Knn(s) => json!({"k": s.best_k}),
        SelectionReport::Kde(s) => json!({"bandwidth": s.best_h, "kernel": s.kernel}),
    }
}

pub fn fit(cfg: &RunConfig, tag: ModelTag) -> Result<Value, CliError> {
    let gt = ground_truth(cfg, EXIT_FIT)?;
    let stage = fit_stage(cfg, tag, &gt);
    stage.begin().map_err(io_err(EXIT_FIT, &stage.dir))?;
    let mut summary = Vec::new();
    for fold in &gt.folds {
        log::info!("fitting {tag} without field {}", fold.test_field);
        let out = fit_fold(tag, &gt.samples, &fold.test_field, &cfg.fit).map_err(err(EXIT_FIT))?;
        let dir = stage.dir.join(&fold.test_field);
        std::fs::create_dir_all(&dir).map_err(io_err(EXIT_FIT, &dir))?;
        out.model.save(dir.join("model.json")).map_err(err(EXIT_FIT))?;
        write_json(&dir.join("selection.json"), &out.selection).map_err(io_err(EXIT_FIT, &dir))?;
        summary.push(json!({
            "test_field": fold.test_field,
            "train_fields": fold.train_fields,
            "selected": selection_summary(&out.selection),
        }));
    }
    stage.finish().map_err(io_err(EXIT_FIT, &stage.dir))?;
    Ok(json!({"model": tag, "dir": stage.dir, "hash": stage.hash, "folds": summary}))
}

struct Captures {
    fields: BTreeMap<String, Vec<MultispectralCapture>>,
    digest: String,
}

fn captures(cfg: &RunConfig, code: i32) -> Result<Captures, CliError> {
    let root = cfg.paths.captures();
    let digest = tree_digest(&root).map_err(io_err(code, &root))?;
    let fields = load_capture_tree(&root).map_err(err(code))?;
    Ok(Captures { fields, digest })
}

fn label_stage(cfg: &RunConfig, fit: &Stage, caps: &Captures) -> Stage {
    Stage::new(
        &cfg.paths.out.join("label"),
        cfg.labeler.as_str(),
        json!({
            "stage": "label",
            "fit": fit.hash,
            "tiling": cfg.tiling,
            "sizes": cfg.sizes,
            "seed": cfg.seed,
            "captures": caps.digest,
        }),
    )
}

fn field_captures<'a>(caps: &'a Captures, field: &str, code: i32) -> Result<&'a [MultispectralCapture], CliError> {
    caps.fields
        .get(field)
        .map(Vec::as_slice)
        .ok_or_else(|| CliError::new(code, format!("no captures for field `{field}`")))
}

fn require(stage: &Stage, code: i32, hint: &str) -> Result<(), CliError> {
    if stage.is_complete() {
        Ok(())
    } else {
        Err(CliError::new(
            code,
            format!("missing upstream artifacts {} (run `{hint}` with this config first)", stage.dir.display()),
        ))
    }
}

fn load_model(fit: &Stage, field: &str, code: i32) -> Result<FittedModel, CliError> {
    FittedModel::load(fit.dir.join(field).join("model.json")).map_err(err(code))
}

pub fn label(cfg: &RunConfig) -> Result<Value, CliError> {
    let gt = ground_truth(cfg, EXIT_LABEL)?;
    let fit = fit_stage(cfg, cfg.labeler, &gt);
    require(&fit, EXIT_LABEL, &format!("fit {}", cfg.labeler))?;
    let caps = captures(cfg, EXIT_LABEL)?;
    let stage = label_stage(cfg, &fit, &caps);
    stage.begin().map_err(io_err(EXIT_LABEL, &stage.dir))?;
    let mut counts = Vec::new();
    for fold in &gt.folds {
        let model = load_model(&fit, &fold.test_field, EXIT_LABEL)?;
        let stack = ndvi_stack(field_captures(&caps, &fold.test_field, EXIT_LABEL)?).map_err(err(EXIT_LABEL))?;
        let tiles: Vec<_> = stack.iter().flat_map(|p| tile_and_filter(p, &cfg.tiling)).collect();
        let outcome = label_dataset(&model, &tiles, cfg.seed).map_err(err(EXIT_LABEL))?;
        let f = &fold.test_field;
        write_labels_jsonl(stage.dir.join(format!("labels_{f}.jsonl")), &outcome.labels).map_err(err(EXIT_LABEL))?;
        write_skip_report(stage.dir.join(format!("skips_{f}.csv")), &outcome.skips).map_err(err(EXIT_LABEL))?;
        let per_tile = |s: usize| (cfg.tiling.size / s).pow(2);
        let values: Vec<f64> = outcome.labels.iter().map(|l| l.cf01).collect();
        let n = values.len() as f64;
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / n);
        counts.push(LabelCountRow {
            field: f.clone(),
            counts: cfg.sizes.iter().map(|s| (*s, outcome.labels.len() * per_tile(*s))).collect(),
            timesteps: stack.len(),
            labeler: Some(cfg.labeler),
            label_mean: mean,
            label_variance: mean.map(|m| values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n),
        });
        log::info!("field {f}: {} labels, {} skipped", outcome.labels.len(), outcome.skips.len());
    }
    write_json(&stage.dir.join("counts.json"), &counts).map_err(io_err(EXIT_LABEL, &stage.dir))?;
    stage.finish().map_err(io_err(EXIT_LABEL, &stage.dir))?;
    Ok(json!({"labeler": cfg.labeler, "dir": stage.dir, "hash": stage.hash, "counts": counts}))
}

struct Upstream {
    gt: GroundTruth,
    fit: Stage,
    caps: Captures,
    label: Stage,
}

fn upstream(cfg: &RunConfig, code: i32) -> Result<Upstream, CliError> {
    let gt = ground_truth(cfg, code)?;
    let fit = fit_stage(cfg, cfg.labeler, &gt);
    require(&fit, code, &format!("fit {}", cfg.labeler))?;
    let caps = captures(cfg, code)?;
    let label = label_stage(cfg, &fit, &caps);
    require(&label, code, "label")?;
    Ok(Upstream { gt, fit, caps, label })
}

fn train_stage(cfg: &RunConfig, kind: NetKind, label: &Stage) -> Stage {
    Stage::new(
        &cfg.paths.out.join("train"),
        &format!("{kind}-{}", cfg.labeler),
        json!({"stage": "train", "label": label.hash, "kind": kind, "sizes": cfg.sizes, "neural": cfg.neural}),
    )
}

fn fold_data(cfg: &RunConfig, up: &Upstream, fold: &FoldSpec, code: i32) -> Result<NeuralFoldData, CliError> {
    let f = &fold.test_field;
    let stack = ndvi_stack(field_captures(&up.caps, f, code)?).map_err(err(code))?;
    let labels = read_labels_jsonl(up.label.dir.join(format!("labels_{f}.jsonl"))).map_err(err(code))?;
    Ok(NeuralFoldData {
        labeler: cfg.labeler,
        test_field: f.clone(),
        train_fields: fold.train_fields.clone(),
        ndvi: stack.into_iter().map(|p| p.values).collect(),
        tile_size: cfg.tiling.size,
        labels,
        targets: Vec::new(),
    })
}

fn weights_name(field: &str, size: usize) -> String {
    format!("{field}_{size}.weights")
}

pub fn train(cfg: &RunConfig, kind: NetKind) -> Result<Value, CliError> {
    let up = upstream(cfg, EXIT_TRAIN)?;
    let stage = train_stage(cfg, kind, &up.label);
    stage.begin().map_err(io_err(EXIT_TRAIN, &stage.dir))?;
    let mut summary = Vec::new();
    for fold in &up.gt.folds {
        let data = fold_data(cfg, &up, fold, EXIT_TRAIN)?;
        for &size in &cfg.sizes {
            let cell = NeuralCell { kind, input_size: size };
            let net = Network::new(cfg.neural.arch(cell)).map_err(err(EXIT_TRAIN))?;
            let examples = neural_examples(&data, cell, cfg.neural.window).map_err(err(EXIT_TRAIN))?;
            log::info!("training {kind}@{size} on field {}: {} examples", fold.test_field, examples.len());
            let outcome = train_network(&net, &examples, &cfg.neural.train).map_err(err(EXIT_TRAIN))?;
            let name = weights_name(&fold.test_field, size);
            save_weights(stage.dir.join(&name), &net, &outcome.params, cfg.seed, outcome.best_epoch)
                .map_err(err(EXIT_TRAIN))?;
            let record = stage.dir.join(format!("{}_{size}.training.json", fold.test_field));
            write_json(&record, &outcome).map_err(io_err(EXIT_TRAIN, &record))?;
            summary.push(json!({
                "test_field": fold.test_field,
                "size": size,
                "examples": examples.len(),
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.curve.len(),
            }));
        }
    }
    stage.finish().map_err(io_err(EXIT_TRAIN, &stage.dir))?;
    Ok(json!({"network": kind, "labeler": cfg.labeler, "dir": stage.dir, "hash": stage.hash, "runs": summary}))
}

fn generative_stage(cfg: &RunConfig, gt: &GroundTruth) -> Stage {
    Stage::new(
        &cfg.paths.out.join("eval"),
        "generative",
        json!({
            "stage": "eval-generative",
            "models": cfg.generative_models,
            "fit": cfg.fit,
            "ground_truth": gt.digest,
            "folds": gt.folds,
        }),
    )
}

pub fn eval_generative(cfg: &RunConfig) -> Result<Value, CliError> {
    let gt = ground_truth(cfg, EXIT_EVAL)?;
    let stage = generative_stage(cfg, &gt);
    let mut cv = run_generative_cv(&gt.samples, &cfg.generative_models, &cfg.fit).map_err(err(EXIT_EVAL))?;
    cv.folds.retain(|f| gt.folds.contains(f));
    cv.results.retain(|r| gt.folds.iter().any(|f| f.test_field == r.fold));
    let mut selections = Vec::new();
    if cfg.generative_models.contains(&ModelTag::Gmm) {
        for fold in &gt.folds {
            if let Ok(out) = fit_fold(ModelTag::Gmm, &gt.samples, &fold.test_field, &cfg.fit) {
                if let SelectionReport::Gmm { best, table } = out.selection {
                    selections.push(SelectionEntry {
                        test_field: fold.test_field.clone(),
                        selected: best,
                        table,
                    });
                }
            }
        }
    }
    stage.begin().map_err(io_err(EXIT_EVAL, &stage.dir))?;
    write_json(&stage.dir.join("results.json"), &cv).map_err(io_err(EXIT_EVAL, &stage.dir))?;
    write_json(&stage.dir.join("gmm_selection.json"), &selections).map_err(io_err(EXIT_EVAL, &stage.dir))?;
    stage.finish().map_err(io_err(EXIT_EVAL, &stage.dir))?;
    let means: BTreeMap<ModelTag, Option<f64>> = cfg
        .generative_models
        .iter()
        .map(|t| (*t, chlorolab_core::eval::mean_rmse(cv.results.iter().filter(|r| r.labeler == Some(*t)))))
        .collect();
    Ok(json!({
        "target": "generative",
        "dir": stage.dir,
        "hash": stage.hash,
        "rmse": cv.results.iter().map(|r| json!({"model": r.model_tag, "fold": r.fold, "rmse": r.rmse, "error": r.error})).collect::<Vec<_>>(),
        "mean_rmse": means,
    }))
}

fn neural_stage(cfg: &RunConfig, up: &Upstream, trains: &[Stage], zones_digest: &str) -> Stage {
    Stage::new(
        &cfg.paths.out.join("eval"),
        &format!("neural-{}", cfg.labeler),
        json!({
            "stage": "eval-neural",
            "train": trains.iter().map(|s| &s.hash).collect::<Vec<_>>(),
            "ground_truth": up.gt.digest,
            "zones": zones_digest,
        }),
    )
}

pub fn eval_neural(cfg: &RunConfig) -> Result<Value, CliError> {
    let up = upstream(cfg, EXIT_EVAL)?;
    let zones_path = cfg.paths.zones();
    let zones = read_zones(&zones_path).map_err(err(EXIT_EVAL))?;
    let zones_digest = file_digest(&zones_path).map_err(io_err(EXIT_EVAL, &zones_path))?;
    let trains: Vec<Stage> = cfg.networks.iter().map(|k| train_stage(cfg, *k, &up.label)).collect();
    let ready: Vec<(NetKind, &Stage)> = cfg
        .networks
        .iter()
        .zip(&trains)
        .filter(|(_, s)| s.is_complete())
        .map(|(k, s)| (*k, s))
        .collect();
    if ready.is_empty() {
        return Err(CliError::new(EXIT_EVAL, "no trained networks for this config (run `train cnn` or `train bilstm` first)"));
    }
    let stage = neural_stage(cfg, &up, &trains, &zones_digest);
    let mut results = Vec::new();
    for fold in &up.gt.folds {
        let mut data = fold_data(cfg, &up, fold, EXIT_EVAL)?;
        let model = load_model(&up.fit, &fold.test_field, EXIT_EVAL)?;
        let dates: Vec<_> = field_captures(&up.caps, &fold.test_field, EXIT_EVAL)?
            .iter()
            .map(|c| c.timestamp)
            .collect();
        data.targets = zone_targets(&up.gt.samples, &zones, &fold.test_field, &dates, &model).map_err(err(EXIT_EVAL))?;
        for (kind, train_dir) in &ready {
            for &size in &cfg.sizes {
                results.push(score_cell(cfg, &data, train_dir, *kind, size));
            }
        }
    }
    stage.begin().map_err(io_err(EXIT_EVAL, &stage.dir))?;
    write_json(&stage.dir.join("results.json"), &results).map_err(io_err(EXIT_EVAL, &stage.dir))?;
    stage.finish().map_err(io_err(EXIT_EVAL, &stage.dir))?;
    Ok(json!({
        "target": "neural",
        "labeler": cfg.labeler,
        "dir": stage.dir,
        "hash": stage.hash,
        "rmse": results.iter().map(|r| json!({
            "network": r.network, "size": r.input_size, "fold": r.fold,
            "rmse": r.rmse, "baseline_rmse": r.baseline_rmse, "error": r.error,
        })).collect::<Vec<_>>(),
    }))
}

fn score_cell(cfg: &RunConfig, data: &NeuralFoldData, train_dir: &Stage, kind: NetKind, size: usize) -> EvalResult {
    let weights = train_dir.dir.join(weights_name(&data.test_field, size));
    let mut result = EvalResult {
        model_tag: format!("{}+{kind}@{size}", data.labeler),
        labeler: Some(data.labeler),
        network: Some(kind),
        input_size: Some(size),
        fold: data.test_field.clone(),
        rmse: None,
        baseline_rmse: None,
        n_test: data.targets.len(),
        error: None,
        manifest: json!({
            "seed": cfg.seed,
            "train_fields": data.train_fields,
            "test_field": data.test_field,
            "weights": weights,
            "train_stage": train_dir.hash,
            "settings": cfg.neural,
        }),
    };
    let outcome = (|| {
        let (net, params, _) = load_weights(&weights)?;
        let cell = NeuralCell { kind, input_size: size };
        let examples = neural_examples(data, cell, cfg.neural.window)?;
        let untrained = train_network(&net, &examples, &TrainConfig { epochs: 0, ..cfg.neural.train.clone() })?;
        Ok::<_, Error>((score_network(&net, &params, data)?, score_network(&net, &untrained.params, data)?))
    })();
    match outcome {
        Ok((r, base)) => {
            result.rmse = Some(r);
            result.baseline_rmse = Some(base);
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

pub fn report(cfg: &RunConfig) -> Result<Value, CliError> {
    let gt = ground_truth(cfg, EXIT_EVAL)?;
    let mut data = ReportData {
        folds: gt.folds.clone(),
        ground_truth: gt.samples.clone(),
        ..ReportData::default()
    };
    let mut stages = serde_json::Map::new();
    let generative = generative_stage(cfg, &gt);
    if generative.is_complete() {
        let cv: GenerativeCv = read_json(&generative.dir.join("results.json")).map_err(io_err(EXIT_EVAL, &generative.dir))?;
        data.generative = cv.results;
        data.gmm_selection =
            read_json(&generative.dir.join("gmm_selection.json")).map_err(io_err(EXIT_EVAL, &generative.dir))?;
        stages.insert("eval_generative".into(), json!(generative.hash));
    }
    if let Ok(up) = upstream(cfg, EXIT_EVAL) {
        data.label_counts = read_json(&up.label.dir.join("counts.json")).map_err(io_err(EXIT_EVAL, &up.label.dir))?;
        stages.insert("label".into(), json!(up.label.hash));
        let trains: Vec<Stage> = cfg.networks.iter().map(|k| train_stage(cfg, *k, &up.label)).collect();
        let zones_digest = file_digest(&cfg.paths.zones()).unwrap_or_default();
        let neural = neural_stage(cfg, &up, &trains, &zones_digest);
        if neural.is_complete() {
            data.neural = read_json(&neural.dir.join("results.json")).map_err(io_err(EXIT_EVAL, &neural.dir))?;
            stages.insert("eval_neural".into(), json!(neural.hash));
        }
    }
    if data.generative.is_empty() && data.neural.is_empty() {
        return Err(CliError::new(EXIT_EVAL, "no evaluation results for this config (run `eval generative` or `eval neural` first)"));
    }
    data.manifest = json!({"config": cfg, "stages": stages});
    let dir = cfg.paths.out.join("report");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io_err(EXIT_EVAL, &dir))?;
    }
    let files = emit_report(&data, &dir).map_err(err(EXIT_EVAL))?;
    Ok(json!({
        "dir": dir,
        "files": files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "stages": stages,
    }))
}
