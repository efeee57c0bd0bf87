//! Ground-truth samples, correlation coefficients and min-max rescaling.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper theoretical bound of the CF measurement, in picoamperes.
pub const CF_MAX_PA: f64 = 10_000.0;

/// One laboratory CF measurement paired with its control-zone NDVI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub field_id: String,
    pub zone_id: String,
    pub date: NaiveDate,
    pub ndvi_mean: f64,
    #[serde(rename = "cf_pA")]
    pub cf_pa: f64,
}

impl GroundTruthSample {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.ndvi_mean) {
            return Err(Error::InvalidInput(format!(
                "ndvi_mean {} outside [-1, 1] ({}/{})",
                self.ndvi_mean, self.field_id, self.zone_id
            )));
        }
        if !(0.0..=CF_MAX_PA).contains(&self.cf_pa) {
            return Err(Error::InvalidInput(format!(
                "cf_pA {} outside [0, {CF_MAX_PA}] ({}/{})",
                self.cf_pa, self.field_id, self.zone_id
            )));
        }
        Ok(())
    }
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthSample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let sample: GroundTruthSample = row?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_ground_truth(path: impl AsRef<Path>, samples: &[GroundTruthSample]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    for s in samples {
        writer.serialize(s)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Distinct field ids, sorted.
pub fn field_ids(samples: &[GroundTruthSample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| s.field_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn correlation(xs: &[f64], ys: &[f64], method: CorrelationMethod) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateSeries("fewer than 2 samples".into()));
    }
    match method {
        CorrelationMethod::Pearson => pearson(xs, ys),
        CorrelationMethod::Spearman => pearson(&average_ranks(xs), &average_ranks(ys)),
    }
}

/// Row/column labels of [`correlation_matrix`].
pub const CORRELATION_LABELS: [&str; 3] = ["NDVI", "CF", "Date"];

/// 3×3 correlation matrix of `(date_num, ndvi, cf)` rows, ordered (NDVI, CF, Date).
pub fn correlation_matrix(rows: &[(f64, f64, f64)], method: CorrelationMethod) -> Result<[[f64; 3]; 3]> {
    let cols: [Vec<f64>; 3] = [
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        rows.iter().map(|r| r.0).collect(),
    ];
    let mut m = [[1.0; 3]; 3];
    for i in 0..3 {
        for j in i + 1..3 {
            let c = correlation(&cols[i], &cols[j], method)?;
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// Days since `origin`.
pub fn day_number(date: NaiveDate, origin: NaiveDate) -> f64 {
    (date - origin).num_days() as f64
}

/// `(days since earliest sample, ndvi, cf)` rows for correlation analysis.
pub fn correlation_rows(samples: &[GroundTruthSample]) -> Vec<(f64, f64, f64)> {
    let Some(origin) = samples.iter().map(|s| s.date).min() else {
        return Vec::new();
    };
    samples
        .iter()
        .map(|s| (day_number(s.date, origin), s.ndvi_mean, s.cf_pa))
        .collect()
}

/// Closed interval learned for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    fn fit(values: impl Iterator<Item = f64>, name: &'static str) -> Result<Self> {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !(max > min) {
            return Err(Error::ConstantDimension(name));
        }
        Ok(Span { min, max })
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn forward_clamped(&self, v: f64) -> f64 {
        self.forward(v).clamp(0.0, 1.0)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// A sample mapped into the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledTriple {
    pub date01: f64,
    pub ndvi01: f64,
    pub cf01: f64,
}

impl ScaledTriple {
    pub fn to_array(self) -> [f64; 3] {
        [self.date01, self.ndvi01, self.cf01]
    }
}

/// Min-max parameters learned on a training split. Dates are encoded as
/// days since the earliest training observation before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub date_origin: NaiveDate,
    pub date: Span,
    pub ndvi: Span,
    pub cf: Span,
}

pub fn fit_scale(samples: &[GroundTruthSample]) -> Result<ScaleParams> {
    let origin = samples
        .iter()
        .map(|s| s.date)
        .min()
        .ok_or_else(|| Error::InsufficientData("no samples to fit a scale on".into()))?;
    Ok(ScaleParams {
        date_origin: origin,
        date: Span::fit(samples.iter().map(|s| day_number(s.date, origin)), "date")?,
        ndvi: Span::fit(samples.iter().map(|s| s.ndvi_mean), "ndvi")?,
        cf: Span::fit(samples.iter().map(|s| s.cf_pa), "cf")?,
    })
}

impl ScaleParams {
    pub fn date01(&self, date: NaiveDate) -> f64 {
        self.date.forward_clamped(day_number(date, self.date_origin))
    }

    pub fn ndvi01(&self, ndvi: f64) -> f64 {
        self.ndvi.forward_clamped(ndvi)
    }

    pub fn cf01(&self, cf_pa: f64) -> f64 {
        self.cf.forward_clamped(cf_pa)
    }

    /// Unclamped CF mapping, for measuring errors of out-of-range truths.
    pub fn cf01_unclamped(&self, cf_pa: f64) -> f64 {
        self.cf.forward(cf_pa)
    }

    pub fn apply(&self, sample: &GroundTruthSample) -> ScaledTriple {
        ScaledTriple {
            date01: self.date01(sample.date),
            ndvi01: self.ndvi01(sample.ndvi_mean),
            cf01: self.cf01(sample.cf_pa),
        }
    }

    pub fn apply_all(&self, samples: &[GroundTruthSample]) -> Vec<ScaledTriple> {
        samples.iter().map(|s| self.apply(s)).collect()
    }

    /// Maps a scaled triple back to `(days since origin, ndvi, cf_pA)`.
    pub fn invert(&self, t: &ScaledTriple) -> (f64, f64, f64) {
        (
            self.date.inverse(t.date01),
            self.ndvi.inverse(t.ndvi01),
            self.cf.inverse(t.cf01),
        )
    }

    pub fn invert_cf(&self, cf01: f64) -> f64 {
        self.cf.inverse(cf01)
    }
}
