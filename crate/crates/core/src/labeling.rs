//! Weak labels sampled from fitted generative models, and leave-one-field-out folds.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generative::{FittedModel, ModelTag};
use crate::histogram::Histogram1D;
use crate::raster::{mean_ndvi, Tile};

/// Draws one label: a bin center picked with probability proportional to
/// its mass, plus zero-mean Gaussian noise with the histogram's standard
/// deviation, clamped to [0, 1].
pub fn sample_weak_label(hist: &Histogram1D, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    let masses = hist.masses();
    let mut acc = 0.0;
    let mut pick = masses.len() - 1;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            pick = i;
            break;
        }
    }
    let base = hist.bin_centers()[pick];
    let sd = hist.variance().sqrt();
    let noise = if sd > 0.0 {
        Normal::new(0.0, sd).expect("finite sd").sample(&mut rng)
    } else {
        0.0
    };
    (base + noise).clamp(0.0, 1.0)
}

/// Stable 64-bit identity of a tile footprint at one timestep.
pub fn tile_hash(field: &str, timestep: usize, origin: (usize, usize), size: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(field.as_bytes());
    h.update([0u8]);
    for v in [timestep, origin.0, origin.1, size] {
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub field: String,
    pub timestep: usize,
    pub origin: [usize; 2],
    pub date: NaiveDate,
    pub ndvi_mean: f64,
    pub cf01: f64,
    pub model: ModelTag,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub field: String,
    pub timestep: usize,
    pub origin_row: usize,
    pub origin_col: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOutcome {
    pub labels: Vec<WeakLabel>,
    pub skips: Vec<SkipRecord>,
}

/// Labels every tile by sampling the model's conditional at (tile date, tile mean NDVI).
///
/// Tiles from fields the model was trained on are rejected with [`Error::FieldLeak`].
pub fn label_dataset(model: &FittedModel, tiles: &[Tile], base_seed: u64) -> Result<LabelOutcome> {
    if let Some(t) = tiles.iter().find(|t| model.train_fields.contains(&t.field_id)) {
        return Err(Error::FieldLeak(t.field_id.clone()));
    }
    let tag = model.tag();
    let results: Vec<std::result::Result<WeakLabel, SkipRecord>> = tiles
        .par_iter()
        .map(|tile| {
            let ndvi = mean_ndvi(tile);
            let seed = base_seed ^ tile_hash(&tile.field_id, tile.timestep_index, tile.origin, tile.size);
            match model.conditional(tile.date, ndvi) {
                Ok(hist) => Ok(WeakLabel {
                    field: tile.field_id.clone(),
                    timestep: tile.timestep_index,
                    origin: [tile.origin.0, tile.origin.1],
                    date: tile.date,
                    ndvi_mean: ndvi,
                    cf01: sample_weak_label(&hist, seed),
                    model: tag,
                    seed,
                }),
                Err(e) => Err(SkipRecord {
                    field: tile.field_id.clone(),
                    timestep: tile.timestep_index,
                    origin_row: tile.origin.0,
                    origin_col: tile.origin.1,
                    reason: e.to_string(),
                }),
            }
        })
        .collect();
    let mut out = LabelOutcome::default();
    for r in results {
        match r {
            Ok(l) => out.labels.push(l),
            Err(s) => out.skips.push(s),
        }
    }
    Ok(out)
}

pub fn write_labels_jsonl(path: impl AsRef<Path>, labels: &[WeakLabel]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for l in labels {
        serde_json::to_writer(&mut buf, l)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels_jsonl(path: impl AsRef<Path>) -> Result<Vec<WeakLabel>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_skip_report(path: impl AsRef<Path>, skips: &[SkipRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    if skips.is_empty() {
        writer.write_record(["field", "timestep", "origin_row", "origin_col", "reason"])?;
    }
    for s in skips {
        writer.serialize(s)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// One leave-one-field-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub train_fields: Vec<String>,
    pub test_field: String,
    pub train_count: usize,
    pub test_count: usize,
}

/// One fold per field, in field-id order.
pub fn leave_one_field_out(field_counts: &BTreeMap<String, usize>) -> Result<Vec<FoldSpec>> {
    if field_counts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-field-out needs at least 2 fields, got {}",
            field_counts.len()
        )));
    }
    let total: usize = field_counts.values().sum();
    Ok(field_counts
        .iter()
        .map(|(test, &count)| FoldSpec {
            train_fields: field_counts.keys().filter(|f| *f != test).cloned().collect(),
            test_field: test.clone(),
            train_count: total - count,
            test_count: count,
        })
        .collect())
}

/// Sample count per field.
pub fn count_by_field<'a>(fields: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for f in fields {
        *counts.entry(f.to_string()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::Estimator;
    use crate::kde::{KdeModel, Kernel};
    use crate::raster::Grid;
    use crate::stats::{ScaleParams, Span};

    fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn folds_reproduce_the_split_table() {
        let folds = leave_one_field_out(&counts(&[("A", 59), ("B", 24), ("C", 16), ("D", 28)])).unwrap();
        let trains: Vec<_> = folds.iter().map(|f| f.train_count).collect();
        assert_eq!(trains, vec![68, 103, 111, 99]);
        assert_eq!(folds[0].train_fields, vec!["B", "C", "D"]);
        assert_eq!(folds[3].test_field, "D");
        assert_eq!(folds.iter().map(|f| f.test_count).sum::<usize>(), 127);

        let two = leave_one_field_out(&counts(&[("X", 1), ("Y", 2)])).unwrap();
        assert_eq!(two.iter().map(|f| f.train_count).collect::<Vec<_>>(), vec![2, 1]);
        assert!(leave_one_field_out(&counts(&[("X", 5)])).is_err());
    }

    #[test]
    fn point_mass_is_reproduced_exactly() {
        let h = Histogram1D::point_mass(0.4);
        for seed in 0..50 {
            assert_eq!(sample_weak_label(&h, seed), 0.4);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let h = Histogram1D::from_weights(vec![0.2, 0.5, 0.8], vec![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(sample_weak_label(&h, 9), sample_weak_label(&h, 9));
        let draws: std::collections::BTreeSet<u64> =
            (0..20).map(|s| sample_weak_label(&h, s).to_bits()).collect();
        assert!(draws.len() > 1);
        assert!((0..1000).all(|s| (0.0..=1.0).contains(&sample_weak_label(&h, s))));
    }

    #[test]
    fn tile_hash_is_stable() {
        assert_eq!(tile_hash("A", 3, (0, 128), 128), tile_hash("A", 3, (0, 128), 128));
        assert_ne!(tile_hash("A", 3, (0, 128), 128), tile_hash("A", 3, (128, 0), 128));
        assert_ne!(tile_hash("A", 3, (0, 128), 128), tile_hash("B", 3, (0, 128), 128));
    }

    fn kde_model(train_fields: &[&str]) -> FittedModel {
        let d0 = NaiveDate::from_ymd_opt(2020, 7, 1).unwrap();
        let samples: Vec<[f64; 3]> = (0..20).map(|i| {
            let u = i as f64 / 19.0;
            [u, u, 1.0 - u]
        }).collect();
        FittedModel {
            scale: ScaleParams {
                date_origin: d0,
                date: Span { min: 0.0, max: 30.0 },
                ndvi: Span { min: 0.0, max: 1.0 },
                cf: Span { min: 0.0, max: 10_000.0 },
            },
            train_fields: train_fields.iter().map(|s| s.to_string()).collect(),
            cf_bins: 256,
            estimator: Estimator::Kde(KdeModel::new(samples, [0.05; 3], Kernel::Gaussian).unwrap()),
        }
    }

    fn tile(field: &str, t: usize, origin: (usize, usize), ndvi: f64, day: u32) -> Tile {
        Tile {
            field_id: field.into(),
            timestep_index: t,
            date: NaiveDate::from_ymd_opt(2020, 7, day).unwrap(),
            origin,
            size: 4,
            ndvi_patch: Grid::filled(4, 4, ndvi),
            vegetation_fraction: 1.0,
        }
    }

    #[test]
    fn labeling_examples() {
        let model = kde_model(&["A"]);
        let empty = label_dataset(&model, &[], 1).unwrap();
        assert!(empty.labels.is_empty() && empty.skips.is_empty());

        let tiles: Vec<Tile> = (0..12)
            .map(|i| tile("B", i % 4, (4 * (i / 4), 0), 0.1 + 0.06 * i as f64, 1 + 2 * i as u32))
            .collect();
        let a = label_dataset(&model, &tiles, 77).unwrap();
        let b = label_dataset(&model, &tiles, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.len() + a.skips.len(), tiles.len());
        assert!(a.labels.iter().all(|l| (0.0..=1.0).contains(&l.cf01) && l.model == ModelTag::Kde));
        let c = label_dataset(&model, &tiles, 78).unwrap();
        assert_ne!(a.labels, c.labels);

        // Per-tile seeds make the result independent of tile order.
        let mut reversed = tiles.clone();
        reversed.reverse();
        let mut r = label_dataset(&model, &reversed, 77).unwrap().labels;
        r.reverse();
        assert_eq!(r, a.labels);

        assert!(matches!(
            label_dataset(&model, &[tile("A", 0, (0, 0), 0.5, 1)], 1),
            Err(Error::FieldLeak(_))
        ));
    }

    #[test]
    fn unsupported_tiles_are_skipped() {
        let mut model = kde_model(&["A"]);
        if let Estimator::Kde(m) = &mut model.estimator {
            m.kernel = Kernel::Box;
            m.bandwidth = [0.06; 3];
        }
        // Date far outside the support is clamped to 1, ndvi 0 is far from the diagonal.
        let tiles = vec![tile("B", 0, (0, 0), 0.0, 31), tile("B", 1, (0, 0), 0.5, 16)];
        let out = label_dataset(&model, &tiles, 3).unwrap();
        assert_eq!(out.labels.len() + out.skips.len(), 2);
        assert_eq!(out.skips.len(), 1);
        assert_eq!(out.skips[0].reason, "conditioning point outside support");
    }

    #[test]
    fn jsonl_and_skip_report_formats() {
        let dir = tempfile::tempdir().unwrap();
        let model = kde_model(&["A"]);
        let tiles = vec![tile("B", 2, (4, 8), 0.5, 9)];
        let out = label_dataset(&model, &tiles, 5).unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels_jsonl(&path, &out.labels).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["field", "timestep", "origin", "date", "ndvi_mean", "cf01", "model", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["origin"], serde_json::json!([4, 8]));
        assert_eq!(v["model"], "kde");
        assert_eq!(read_labels_jsonl(&path).unwrap(), out.labels);

        let skip = dir.path().join("skips.csv");
        write_skip_report(&skip, &[SkipRecord {
            field: "B".into(),
            timestep: 1,
            origin_row: 0,
            origin_col: 4,
            reason: "conditioning point outside support".into(),
        }])
        .unwrap();
        let text = std::fs::read_to_string(&skip).unwrap();
        assert!(text.starts_with("field,timestep,origin_row,origin_col,reason\nB,1,0,4,"));
        write_skip_report(&skip, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&skip).unwrap(), "field,timestep,origin_row,origin_col,reason\n");
    }
}
