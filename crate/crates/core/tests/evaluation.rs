use chlorolab_core::eval::{
    build_neural_fold, fit_fold, neural_examples, run_generative_cv, run_neural_cell, NeuralCell, NeuralSettings,
};
use chlorolab_core::nn::{NetKind, TrainConfig};
use chlorolab_core::synth::{generate, SynthBundle, SynthSpec};
use chlorolab_core::{FitConfig, ModelTag, TilingConfig};

fn small_spec(n_fields: usize, sigma: f64) -> SynthSpec {
    SynthSpec {
        n_fields,
        width: 128,
        height: 128,
        tile_size: 32,
        sigma_cf: sigma,
        sigma_ndvi: sigma,
        seed: 3,
        ..SynthSpec::default()
    }
}

fn tiling(bundle: &SynthBundle) -> TilingConfig {
    TilingConfig {
        size: bundle.spec.tile_size,
        ..TilingConfig::default()
    }
}

#[test]
fn generative_cv_is_near_exact_on_low_noise_fields() {
    let spec = SynthSpec {
        t0_spread: 0.0,
        ..small_spec(3, 0.002)
    };
    let bundle = generate(&spec).unwrap();
    let cv = run_generative_cv(&bundle.ground_truth, &[ModelTag::Knn, ModelTag::Kde], &FitConfig::default()).unwrap();
    assert_eq!(cv.folds.len(), 3);
    assert_eq!(cv.results.len(), 6);
    for r in &cv.results {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert_eq!(r.n_test, 24);
    }
    for tag in [ModelTag::Knn, ModelTag::Kde] {
        let mean = cv.means[&tag].unwrap();
        assert!(mean <= 0.05, "{tag}: {mean}");
    }
}

#[test]
fn generative_cv_is_deterministic() {
    let bundle = generate(&small_spec(2, 0.02)).unwrap();
    let tags = [ModelTag::Gmm, ModelTag::Knn, ModelTag::Kde];
    let a = run_generative_cv(&bundle.ground_truth, &tags, &FitConfig::default()).unwrap();
    let b = run_generative_cv(&bundle.ground_truth, &tags, &FitConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn single_field_has_no_folds() {
    let bundle = generate(&small_spec(1, 0.02)).unwrap();
    assert!(run_generative_cv(&bundle.ground_truth, &[ModelTag::Kde], &FitConfig::default()).is_err());
}

fn kde_fold(bundle: &SynthBundle, field: &str) -> chlorolab_core::eval::NeuralFoldData {
    let fit = fit_fold(ModelTag::Kde, &bundle.ground_truth, field, &FitConfig::default()).unwrap();
    build_neural_fold(
        &fit.model,
        &bundle.captures[field],
        &tiling(bundle),
        &bundle.ground_truth,
        &bundle.zones,
        7,
    )
    .unwrap()
}

#[test]
fn fold_data_covers_every_tile_and_zone() {
    let bundle = generate(&small_spec(2, 0.02)).unwrap();
    let data = kde_fold(&bundle, "A");
    assert_eq!(data.train_fields, vec!["B".to_string()]);
    assert_eq!(data.ndvi.len(), 6);
    assert_eq!(data.labels.len(), 6 * 16);
    assert_eq!(data.targets.len(), 24);
    let cnn = neural_examples(&data, NeuralCell { kind: NetKind::Cnn, input_size: 16 }, 4).unwrap();
    assert_eq!(cnn.len(), data.labels.len() * 4);
    let lstm = neural_examples(&data, NeuralCell { kind: NetKind::Bilstm, input_size: 32 }, 4).unwrap();
    assert_eq!(lstm.len(), 16 * 3);
    assert!(lstm.iter().all(|e| e.inputs.len() == 4 && e.targets.len() == 4));
}

#[test]
fn untrained_network_matches_its_baseline() {
    let bundle = generate(&small_spec(2, 0.02)).unwrap();
    let data = kde_fold(&bundle, "B");
    let settings = NeuralSettings {
        train: TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        ..NeuralSettings::default()
    };
    for kind in [NetKind::Cnn, NetKind::Bilstm] {
        let run = run_neural_cell(&data, NeuralCell { kind, input_size: 32 }, &settings);
        assert!(run.result.error.is_none(), "{:?}", run.result.error);
        assert_eq!(run.result.rmse, run.result.baseline_rmse);
    }
}

#[test]
fn trained_bilstm_beats_its_baseline() {
    let bundle = generate(&small_spec(2, 0.02)).unwrap();
    let data = kde_fold(&bundle, "A");
    let settings = NeuralSettings {
        train: TrainConfig {
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..NeuralSettings::default()
    };
    let run = run_neural_cell(&data, NeuralCell { kind: NetKind::Bilstm, input_size: 32 }, &settings);
    let (rmse, base) = (run.result.rmse.unwrap(), run.result.baseline_rmse.unwrap());
    assert!(rmse < base, "trained {rmse} vs baseline {base}");
}
