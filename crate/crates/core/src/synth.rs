//! Synthetic multi-temporal fields with a known CF process.
//!
//! Each field raster is split into tile-sized cells. Every cell follows a
//! logistic CF decay plus Gaussian jitter; pixel NDVI is an affine function
//! of the cell CF plus spatially smoothed noise. Four cells per field act as
//! ground-truth zones.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{write_capture, Grid, MultispectralCapture, DEFAULT_GSD_CM, DEFAULT_TILE_SIZE};
use crate::stats::{write_ground_truth, GroundTruthSample};

/// CF decay curve of one field, in timestep units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCurve {
    pub t0: f64,
    pub steepness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_fields: usize,
    pub timesteps: usize,
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub zones: usize,
    /// Explicit per-field curves; when empty, midpoints are spread evenly by
    /// `t0_spread` around the middle timestep.
    pub curves: Vec<FieldCurve>,
    pub steepness: f64,
    pub t0_spread: f64,
    pub ndvi_slope: f64,
    pub ndvi_intercept: f64,
    pub sigma_cf: f64,
    pub sigma_ndvi: f64,
    /// Half-width of the box filter smoothing the NDVI noise.
    pub noise_radius: usize,
    pub start_date: NaiveDate,
    pub cadence_days: u64,
    pub cf_low_pa: f64,
    pub cf_high_pa: f64,
    pub gsd_cm: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_fields: 2,
            timesteps: 6,
            width: 512,
            height: 512,
            tile_size: DEFAULT_TILE_SIZE,
            zones: 4,
            curves: Vec::new(),
            steepness: 1.2,
            t0_spread: 0.25,
            ndvi_slope: 0.5,
            ndvi_intercept: 0.4,
            sigma_cf: 0.02,
            sigma_ndvi: 0.02,
            noise_radius: 2,
            start_date: NaiveDate::from_ymd_opt(2020, 7, 1).expect("valid date"),
            cadence_days: 7,
            cf_low_pa: 1500.0,
            cf_high_pa: 7500.0,
            gsd_cm: DEFAULT_GSD_CM,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if self.n_fields == 0 {
            return fail("at least one field is required".into());
        }
        if self.timesteps < 4 {
            return fail(format!("timesteps must be >= 4, got {}", self.timesteps));
        }
        if !(self.sigma_cf >= 0.0 && self.sigma_ndvi >= 0.0) {
            return fail("noise levels must be >= 0".into());
        }
        if self.tile_size == 0 || self.width < self.tile_size || self.height < self.tile_size {
            return fail(format!(
                "raster {}x{} cannot hold a {} pixel cell",
                self.width, self.height, self.tile_size
            ));
        }
        let cells = (self.width / self.tile_size) * (self.height / self.tile_size);
        if self.zones == 0 || self.zones > cells {
            return fail(format!("{} zones requested but only {cells} cells exist", self.zones));
        }
        if !self.curves.is_empty() && self.curves.len() != self.n_fields {
            return fail(format!("{} curves for {} fields", self.curves.len(), self.n_fields));
        }
        if self.field_curves().iter().any(|c| !(c.steepness > 0.0)) || !(self.steepness > 0.0) {
            return fail("steepness must be > 0".into());
        }
        if !(self.ndvi_slope != 0.0 && self.ndvi_slope.is_finite()) {
            return fail("ndvi slope must be non-zero".into());
        }
        if !(self.cf_high_pa > self.cf_low_pa && self.cf_low_pa >= 0.0 && self.cf_high_pa <= crate::stats::CF_MAX_PA) {
            return fail("CF range must satisfy 0 <= low < high <= 10000".into());
        }
        if self.cadence_days == 0 {
            return fail("cadence must be at least one day".into());
        }
        Ok(())
    }

    pub fn field_curves(&self) -> Vec<FieldCurve> {
        if !self.curves.is_empty() {
            return self.curves.clone();
        }
        let mid = (self.timesteps as f64 - 1.0) / 2.0;
        (0..self.n_fields)
            .map(|f| {
                let offset = if self.n_fields == 1 {
                    0.0
                } else {
                    self.t0_spread * (f as f64 / (self.n_fields - 1) as f64 - 0.5)
                };
                FieldCurve {
                    t0: mid + offset,
                    steepness: self.steepness,
                }
            })
            .collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.timesteps)
            .map(|t| self.start_date + Days::new(t as u64 * self.cadence_days))
            .collect()
    }
}

/// `A`, `B`, … then `F27`, `F28`, …
pub fn field_name(index: usize) -> String {
    if index < 26 {
        char::from(b'A' + index as u8).to_string()
    } else {
        format!("F{}", index + 1)
    }
}

pub fn logistic_decay(t: f64, curve: &FieldCurve) -> f64 {
    1.0 / (1.0 + (curve.steepness * (t - curve.t0)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTruth {
    pub field_id: String,
    pub curve: FieldCurve,
}

/// Closed-form description of the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    pub ndvi_slope: f64,
    pub ndvi_intercept: f64,
    pub sigma_cf: f64,
    /// Approximate standard deviation of the smoothed noise averaged over a zone.
    pub zone_ndvi_sigma: f64,
    pub start_date: NaiveDate,
    pub cadence_days: u64,
    pub cf_low_pa: f64,
    pub cf_high_pa: f64,
    pub fields: Vec<FieldTruth>,
}

impl TruthModel {
    pub fn timestep_of(&self, date: NaiveDate) -> f64 {
        (date - self.start_date).num_days() as f64 / self.cadence_days as f64
    }

    /// Noise-free CF of a field at `date`, in generator units `[0, 1]`.
    pub fn mean_cf01(&self, field: &str, date: NaiveDate) -> Option<f64> {
        let f = self.fields.iter().find(|f| f.field_id == field)?;
        Some(logistic_decay(self.timestep_of(date), &f.curve))
    }

    /// Inverse of the NDVI link.
    pub fn cf01_from_ndvi(&self, ndvi: f64) -> f64 {
        (ndvi - self.ndvi_intercept) / self.ndvi_slope
    }

    pub fn cf01_to_pa(&self, cf01: f64) -> f64 {
        self.cf_low_pa + cf01 * (self.cf_high_pa - self.cf_low_pa)
    }

    pub fn pa_to_cf01(&self, pa: f64) -> f64 {
        (pa - self.cf_low_pa) / (self.cf_high_pa - self.cf_low_pa)
    }

    /// Posterior mean of generator CF given a zone's date and mean NDVI,
    /// treating every field as equally likely and ignoring clamping.
    pub fn conditional_mean(&self, date: NaiveDate, ndvi: f64) -> f64 {
        let (a, b) = (self.ndvi_slope, self.ndvi_intercept);
        let prior_var = self.sigma_cf * self.sigma_cf;
        let noise_var = self.zone_ndvi_sigma * self.zone_ndvi_sigma;
        let obs_var = a * a * prior_var + noise_var;
        if obs_var == 0.0 {
            return self.cf01_from_ndvi(ndvi);
        }
        let t = self.timestep_of(date);
        let gain = a * prior_var / obs_var;
        let parts: Vec<(f64, f64)> = self
            .fields
            .iter()
            .map(|f| {
                let m = logistic_decay(t, &f.curve);
                let r = ndvi - a * m - b;
                (-0.5 * r * r / obs_var, m + gain * r)
            })
            .collect();
        let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, mean) in parts {
            let w = (lw - top).exp();
            num += w * mean;
            den += w;
        }
        num / den
    }
}

/// Location of a ground-truth zone inside its field raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub field_id: String,
    pub zone_id: String,
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub spec: SynthSpec,
    pub captures: BTreeMap<String, Vec<MultispectralCapture>>,
    /// Generator NDVI planes before 16-bit quantization.
    pub ndvi: BTreeMap<String, Vec<Grid>>,
    pub ground_truth: Vec<GroundTruthSample>,
    pub truth: TruthModel,
    pub zones: Vec<ZoneRecord>,
}

/// Reflectances in `[0, 1]` whose NDVI is exactly `v`: the dominant band is
/// pinned at 1 and the other solved from the index.
pub fn bands_for_ndvi(v: f64) -> (f64, f64) {
    if v >= 0.0 {
        (1.0, (1.0 - v) / (1.0 + v))
    } else {
        ((1.0 + v) / (1.0 - v), 1.0)
    }
}

fn box_blur(data: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return data.to_vec();
    }
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        let mut prefix = vec![0.0; len + 1];
        for line in 0..lines {
            let base = line * step;
            for i in 0..len {
                prefix[i + 1] = prefix[i] + src[base + i * stride];
            }
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(len);
                out[base + i * stride] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            }
        }
        out
    };
    let horiz = pass(data, w, 1, h, w);
    pass(&horiz, h, w, w, 1)
}

struct FieldOutput {
    captures: Vec<MultispectralCapture>,
    ndvi: Vec<Grid>,
    rows: Vec<GroundTruthSample>,
    zones: Vec<ZoneRecord>,
    out_of_range: usize,
}

fn generate_field(spec: &SynthSpec, index: usize, curve: FieldCurve) -> Result<FieldOutput> {
    let field_id = field_name(index);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let ts = spec.tile_size;
    let (cell_rows, cell_cols) = (spec.height / ts, spec.width / ts);
    let mut cells: Vec<usize> = (0..cell_rows * cell_cols).collect();
    cells.shuffle(&mut rng);
    let mut zone_cells = cells[..spec.zones].to_vec();
    zone_cells.sort_unstable();
    let zones: Vec<ZoneRecord> = zone_cells
        .iter()
        .enumerate()
        .map(|(z, &c)| ZoneRecord {
            field_id: field_id.clone(),
            zone_id: format!("z{}", z + 1),
            row: (c / cell_cols) * ts,
            col: (c % cell_cols) * ts,
            size: ts,
        })
        .collect();

    let cf_noise = Normal::new(0.0, spec.sigma_cf.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let noise_gain = spec.sigma_ndvi * (2 * spec.noise_radius + 1) as f64;
    let (w, h) = (spec.width, spec.height);
    let mut out = FieldOutput {
        captures: Vec::with_capacity(spec.timesteps),
        ndvi: Vec::with_capacity(spec.timesteps),
        rows: Vec::new(),
        zones: zones.clone(),
        out_of_range: 0,
    };
    for (t, date) in spec.dates().into_iter().enumerate() {
        let base = logistic_decay(t as f64, &curve);
        let cell_cf: Vec<f64> = (0..cell_rows * cell_cols)
            .map(|_| {
                let e = if spec.sigma_cf > 0.0 { cf_noise.sample(&mut rng) } else { 0.0 };
                (base + e).clamp(0.0, 1.0)
            })
            .collect();
        let noise = if spec.sigma_ndvi > 0.0 {
            let white: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
            box_blur(&white, w, h, spec.noise_radius)
        } else {
            vec![0.0; w * h]
        };
        let mut plane = Vec::with_capacity(w * h);
        for row in 0..h {
            let cr = (row / ts).min(cell_rows - 1);
            for col in 0..w {
                let cc = (col / ts).min(cell_cols - 1);
                let v = spec.ndvi_slope * cell_cf[cr * cell_cols + cc] + spec.ndvi_intercept + noise_gain * noise[row * w + col];
                if !(-1.0..=1.0).contains(&v) {
                    out.out_of_range += 1;
                }
                plane.push(v.clamp(-1.0, 1.0));
            }
        }
        let mut red = Vec::with_capacity(w * h);
        let mut nir = Vec::with_capacity(w * h);
        for &v in &plane {
            let (n, r) = bands_for_ndvi(v);
            nir.push(n);
            red.push(r);
        }
        let blue: Vec<f64> = red.iter().map(|r| 0.4 * r).collect();
        let green: Vec<f64> = red.iter().zip(&nir).map(|(r, n)| 0.3 * r + 0.2 * n).collect();
        let rededge: Vec<f64> = red.iter().zip(&nir).map(|(r, n)| 0.5 * (r + n)).collect();
        let bands = [
            Grid::new(w, h, blue)?,
            Grid::new(w, h, green)?,
            Grid::new(w, h, red)?,
            Grid::new(w, h, rededge)?,
            Grid::new(w, h, nir)?,
        ];
        let plane = Grid::new(w, h, plane)?;
        for (z, zone) in zones.iter().enumerate() {
            let cf01 = cell_cf[zone_cells[z]];
            out.rows.push(GroundTruthSample {
                field_id: field_id.clone(),
                zone_id: zone.zone_id.clone(),
                date,
                ndvi_mean: plane.window(zone.row, zone.col, ts).mean(),
                cf_pa: spec.cf_low_pa + cf01 * (spec.cf_high_pa - spec.cf_low_pa),
            });
        }
        out.captures.push(MultispectralCapture::new(field_id.clone(), date, bands, spec.gsd_cm)?);
        out.ndvi.push(plane);
    }
    Ok(out)
}

/// Generates every field of `spec`. Fields are simulated in parallel from
/// per-field RNG streams, so the result does not depend on scheduling.
pub fn generate(spec: &SynthSpec) -> Result<SynthBundle> {
    spec.validate()?;
    let curves = spec.field_curves();
    let fields: Vec<FieldOutput> = curves
        .par_iter()
        .enumerate()
        .map(|(i, c)| generate_field(spec, i, *c))
        .collect::<Result<_>>()?;
    let total = spec.n_fields * spec.timesteps * spec.width * spec.height;
    let outside: usize = fields.iter().map(|f| f.out_of_range).sum();
    if outside * 2 > total {
        return Err(Error::SpecInfeasible(format!(
            "{outside} of {total} NDVI values fall outside [-1, 1] before clamping"
        )));
    }
    let truth = TruthModel {
        ndvi_slope: spec.ndvi_slope,
        ndvi_intercept: spec.ndvi_intercept,
        sigma_cf: spec.sigma_cf,
        zone_ndvi_sigma: spec.sigma_ndvi * (2 * spec.noise_radius + 1) as f64 / spec.tile_size as f64,
        start_date: spec.start_date,
        cadence_days: spec.cadence_days,
        cf_low_pa: spec.cf_low_pa,
        cf_high_pa: spec.cf_high_pa,
        fields: curves
            .iter()
            .enumerate()
            .map(|(i, c)| FieldTruth {
                field_id: field_name(i),
                curve: *c,
            })
            .collect(),
    };
    let mut bundle = SynthBundle {
        spec: spec.clone(),
        captures: BTreeMap::new(),
        ndvi: BTreeMap::new(),
        ground_truth: Vec::new(),
        truth,
        zones: Vec::new(),
    };
    for (i, f) in fields.into_iter().enumerate() {
        let id = field_name(i);
        bundle.ground_truth.extend(f.rows);
        bundle.zones.extend(f.zones);
        bundle.captures.insert(id.clone(), f.captures);
        bundle.ndvi.insert(id, f.ndvi);
    }
    Ok(bundle)
}

#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a SynthSpec,
    truth: &'a TruthModel,
}

/// Writes `captures/<field>/<date>/`, `ground_truth.csv`, `truth.json` and `zones.json`.
pub fn write_bundle(bundle: &SynthBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jobs: Vec<(&String, &MultispectralCapture)> = bundle
        .captures
        .iter()
        .flat_map(|(f, cs)| cs.iter().map(move |c| (f, c)))
        .collect();
    jobs.par_iter().try_for_each(|(field, capture)| {
        write_capture(dir.join("captures").join(field).join(capture.timestamp.to_string()), capture)
    })?;
    write_ground_truth(dir.join("ground_truth.csv"), &bundle.ground_truth)?;
    let truth = serde_json::to_string_pretty(&TruthFile {
        spec: &bundle.spec,
        truth: &bundle.truth,
    })?;
    let path = dir.join("truth.json");
    std::fs::write(&path, truth + "\n").map_err(|e| Error::io(&path, e))?;
    let zones = serde_json::to_string_pretty(&bundle.zones)?;
    let path = dir.join("zones.json");
    std::fs::write(&path, zones + "\n").map_err(|e| Error::io(&path, e))
}

#[derive(Deserialize)]
struct TruthFileOwned {
    spec: SynthSpec,
    truth: TruthModel,
}

/// Reads `truth.json` back as `(spec, truth)`.
pub fn read_truth(path: impl AsRef<Path>) -> Result<(SynthSpec, TruthModel)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: TruthFileOwned = serde_json::from_str(&text)?;
    Ok((t.spec, t.truth))
}

pub fn read_zones(path: impl AsRef<Path>) -> Result<Vec<ZoneRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{compute_ndvi, load_capture_tree};

    fn small() -> SynthSpec {
        SynthSpec {
            width: 64,
            height: 48,
            tile_size: 16,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn row_count_is_fields_zones_timesteps() {
        let b = generate(&small()).unwrap();
        assert_eq!(b.ground_truth.len(), 2 * 4 * 6);
        assert_eq!(b.zones.len(), 8);
        assert_eq!(b.captures["A"].len(), 6);
        let b = generate(&SynthSpec { n_fields: 3, timesteps: 5, zones: 2, ..small() }).unwrap();
        assert_eq!(b.ground_truth.len(), 3 * 2 * 5);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        assert_ne!(a.ground_truth, generate(&SynthSpec { seed: 8, ..small() }).unwrap().ground_truth);
    }

    #[test]
    fn noiseless_link_inverts_exactly() {
        let spec = SynthSpec {
            sigma_cf: 0.0,
            sigma_ndvi: 0.0,
            ..small()
        };
        let b = generate(&spec).unwrap();
        for s in &b.ground_truth {
            let cf = b.truth.pa_to_cf01(s.cf_pa);
            assert!((b.truth.cf01_from_ndvi(s.ndvi_mean) - cf).abs() < 1e-12);
            assert!((b.truth.conditional_mean(s.date, s.ndvi_mean) - cf).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_zone_cf_is_non_increasing() {
        let b = generate(&SynthSpec { sigma_cf: 0.0, ..small() }).unwrap();
        let mut by_zone: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for s in &b.ground_truth {
            by_zone.entry((s.field_id.clone(), s.zone_id.clone())).or_default().push(s.cf_pa);
        }
        for series in by_zone.values() {
            assert!(series.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn band_inversion_is_exact() {
        for i in 0..=200 {
            let v = -1.0 + i as f64 / 100.0;
            let (n, r) = bands_for_ndvi(v);
            assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&r));
            assert!((crate::raster::ndvi_value(n, r) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn written_captures_round_trip_ndvi() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate(&small()).unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let tree = load_capture_tree(dir.path().join("captures")).unwrap();
        assert_eq!(tree.keys().collect::<Vec<_>>(), vec!["A", "B"]);
        let mut worst: f64 = 0.0;
        for (field, caps) in &tree {
            for (c, plane) in caps.iter().zip(&b.ndvi[field]) {
                let n = compute_ndvi(c);
                for (x, y) in n.values.as_slice().iter().zip(plane.as_slice()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        assert!(worst <= 1.6e-5, "worst {worst}");
        let (spec, truth) = read_truth(dir.path().join("truth.json")).unwrap();
        assert_eq!(spec, b.spec);
        assert_eq!(truth, b.truth);
        assert_eq!(read_zones(dir.path().join("zones.json")).unwrap(), b.zones);
    }

    #[test]
    fn infeasible_spec_is_reported() {
        let spec = SynthSpec {
            ndvi_intercept: 1.5,
            ..small()
        };
        assert!(matches!(generate(&spec), Err(Error::SpecInfeasible(_))));
        assert!(generate(&SynthSpec { timesteps: 3, ..small() }).is_err());
        assert!(generate(&SynthSpec { steepness: 0.0, ..small() }).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let d = vec![2.5; 35];
        assert!(box_blur(&d, 7, 5, 2).iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
