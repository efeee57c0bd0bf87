use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{mean_rmse, EvalResult};
use crate::error::{Error, Result};
use crate::generative::ModelTag;
use crate::gmm::SelectionTable;
use crate::labeling::FoldSpec;
use crate::nn::NetKind;
use crate::stats::{correlation_matrix, correlation_rows, CorrelationMethod, GroundTruthSample, CORRELATION_LABELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub test_field: String,
    pub selected: usize,
    pub table: SelectionTable,
}

/// Weak-label counts of one field per network input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCountRow {
    pub field: String,
    pub counts: BTreeMap<usize, usize>,
    pub timesteps: usize,
    #[serde(default)]
    pub labeler: Option<ModelTag>,
    /// Mean and population variance of the tile-level scaled weak labels.
    #[serde(default)]
    pub label_mean: Option<f64>,
    #[serde(default)]
    pub label_variance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportData {
    pub folds: Vec<FoldSpec>,
    pub gmm_selection: Vec<SelectionEntry>,
    pub generative: Vec<EvalResult>,
    pub label_counts: Vec<LabelCountRow>,
    pub neural: Vec<EvalResult>,
    pub ground_truth: Vec<GroundTruthSample>,
    /// Free-form run description copied into `manifest.json`.
    pub manifest: serde_json::Value,
}

fn f4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

fn table_iv(data: &ReportData) -> Result<Vec<u8>> {
    let cs: BTreeSet<usize> = data
        .gmm_selection
        .iter()
        .flat_map(|e| e.table.rows.iter().map(|r| r.components))
        .collect();
    let mut header = vec!["test_field".to_string(), "criterion".to_string()];
    header.extend(cs.iter().map(|c| c.to_string()));
    header.push("selected".into());
    let mut rows = Vec::new();
    for e in &data.gmm_selection {
        for (name, pick) in [("BIC", 0), ("AIC", 1)] {
            let mut row = vec![e.test_field.clone(), name.to_string()];
            for c in &cs {
                let cell = e.table.rows.iter().find(|r| r.components == *c);
                row.push(cell.map(|r| format!("{:.2}", if pick == 0 { r.bic } else { r.aic })).unwrap_or_else(|| "NA".into()));
            }
            row.push(e.selected.to_string());
            rows.push(row);
        }
    }
    csv_bytes(&header, &rows)
}

fn table_v(data: &ReportData) -> Result<Vec<u8>> {
    let header: Vec<String> = ["train_fields", "train_samples", "test_field", "test_samples"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = data
        .folds
        .iter()
        .map(|f| {
            vec![
                f.train_fields.join(", "),
                f.train_count.to_string(),
                f.test_field.clone(),
                f.test_count.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn generative_grid(data: &ReportData) -> (Vec<ModelTag>, Vec<String>) {
    let tags: BTreeSet<ModelTag> = data.generative.iter().filter_map(|r| r.labeler).collect();
    let folds: BTreeSet<String> = data.generative.iter().map(|r| r.fold.clone()).collect();
    (tags.into_iter().collect(), folds.into_iter().collect())
}

fn table_vi(data: &ReportData) -> Result<Vec<u8>> {
    let (tags, folds) = generative_grid(data);
    let mut header = vec!["test_field".to_string()];
    header.extend(tags.iter().map(|t| t.display_name().to_string()));
    let cell = |fold: &str, tag: ModelTag| {
        data.generative
            .iter()
            .find(|r| r.fold == fold && r.labeler == Some(tag))
            .and_then(|r| r.rmse)
    };
    let mut rows: Vec<Vec<String>> = folds
        .iter()
        .map(|f| std::iter::once(f.clone()).chain(tags.iter().map(|t| f4(cell(f, *t)))).collect())
        .collect();
    let mut mean = vec!["Mean".to_string()];
    mean.extend(tags.iter().map(|t| f4(mean_rmse(data.generative.iter().filter(|r| r.labeler == Some(*t))))));
    rows.push(mean);
    csv_bytes(&header, &rows)
}

fn sizes(data: &ReportData) -> Vec<usize> {
    let mut s: BTreeSet<usize> = data.label_counts.iter().flat_map(|r| r.counts.keys().copied()).collect();
    s.extend(data.neural.iter().filter_map(|r| r.input_size));
    s.into_iter().collect()
}

fn table_vii(data: &ReportData) -> Result<Vec<u8>> {
    let sizes = sizes(data);
    let mut header = vec!["labeled_field".to_string()];
    header.extend(sizes.iter().map(|s| format!("{s}x{s}")));
    header.push("num_timesteps".into());
    let rows: Vec<Vec<String>> = data
        .label_counts
        .iter()
        .map(|r| {
            let mut row = vec![r.field.clone()];
            row.extend(sizes.iter().map(|s| r.counts.get(s).map(|c| c.to_string()).unwrap_or_else(|| "NA".into())));
            row.push(r.timesteps.to_string());
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn neural_columns(data: &ReportData) -> Vec<(usize, NetKind)> {
    let cols: BTreeSet<(usize, NetKind)> = data
        .neural
        .iter()
        .filter_map(|r| Some((r.input_size?, r.network?)))
        .collect();
    cols.into_iter().collect()
}

fn table_viii(data: &ReportData) -> Result<Vec<u8>> {
    let cols = neural_columns(data);
    let mut header = vec!["labeler".to_string(), "test_field".to_string()];
    header.extend(cols.iter().map(|(s, k)| format!("{}_{s}x{s}", k.display_name())));
    let labelers: BTreeSet<ModelTag> = data.neural.iter().filter_map(|r| r.labeler).collect();
    let folds: BTreeSet<&str> = data.neural.iter().map(|r| r.fold.as_str()).collect();
    let mut rows = Vec::new();
    for lab in &labelers {
        let in_block = |r: &&EvalResult, s: usize, k: NetKind| r.labeler == Some(*lab) && r.input_size == Some(s) && r.network == Some(k);
        for fold in &folds {
            let mut row = vec![lab.display_name().to_string(), fold.to_string()];
            for (s, k) in &cols {
                let v = data.neural.iter().find(|r| in_block(r, *s, *k) && r.fold == *fold).and_then(|r| r.rmse);
                row.push(f4(v));
            }
            rows.push(row);
        }
        let mut row = vec![lab.display_name().to_string(), "Mean".to_string()];
        for (s, k) in &cols {
            row.push(f4(mean_rmse(data.neural.iter().filter(|r| in_block(r, *s, *k)))));
        }
        rows.push(row);
    }
    csv_bytes(&header, &rows)
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Two stacked line charts (CF and NDVI against date), one line per zone.
fn figure(field: &str, samples: &[&GroundTruthSample]) -> String {
    let (w, panel_h, margin) = (640.0, 200.0, 50.0);
    let height = 2.0 * panel_h + 3.0 * margin;
    let dates: BTreeSet<chrono::NaiveDate> = samples.iter().map(|s| s.date).collect();
    let d0 = *dates.iter().next().expect("non-empty field");
    let span_days = dates.iter().next_back().map(|d| (*d - d0).num_days()).unwrap_or(0).max(1) as f64;
    let mut zones: BTreeMap<&str, Vec<&GroundTruthSample>> = BTreeMap::new();
    for s in samples {
        zones.entry(s.zone_id.as_str()).or_default().push(s);
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">Field {field}</text>"#, w / 2.0);
    let panels: [(&str, fn(&GroundTruthSample) -> f64); 2] = [("CF (pA)", |s| s.cf_pa), ("NDVI", |s| s.ndvi_mean)];
    for (p, (label, value)) in panels.iter().enumerate() {
        let top = margin + p as f64 * (panel_h + margin);
        let vals: Vec<f64> = samples.iter().map(|s| value(s)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let x = |d: chrono::NaiveDate| margin + (d - d0).num_days() as f64 / span_days * (w - 2.0 * margin);
        let y = |v: f64| top + panel_h - (v - lo) / (hi - lo) * panel_h;
        let _ = writeln!(
            svg,
            r##"<rect x="{margin:.2}" y="{top:.2}" width="{:.2}" height="{panel_h:.2}" fill="none" stroke="#999"/>"##,
            w - 2.0 * margin
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, margin, top - 6.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, margin - 4.0, top + 10.0, fmt_axis(hi));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, margin - 4.0, top + panel_h, fmt_axis(lo));
        for (i, (zone, rows)) in zones.iter().enumerate() {
            let mut rows = rows.clone();
            rows.sort_by_key(|s| s.date);
            let points: Vec<String> = rows.iter().map(|s| format!("{:.2},{:.2}", x(s.date), y(value(s)))).collect();
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{zone}</title></polyline>"#,
                points.join(" ")
            );
        }
    }
    let axis_y = height - margin + 16.0;
    let _ = writeln!(svg, r#"<text x="{margin:.2}" y="{axis_y:.2}">{d0}</text>"#);
    if let Some(last) = dates.iter().next_back() {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{axis_y:.2}" text-anchor="end">{last}</text>"#, w - margin);
    }
    for (i, zone) in zones.keys().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{axis_y:.2}" fill="{}">{zone}</text>"#,
            w / 2.0 - 80.0 + 45.0 * i as f64,
            PALETTE[i % PALETTE.len()]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_axis(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn markdown_table(csv: &[u8]) -> String {
    let mut rd = csv::Reader::from_reader(csv);
    let mut out = String::new();
    let header: Vec<String> = rd.headers().map(|h| h.iter().map(String::from).collect()).unwrap_or_default();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for rec in rd.records().flatten() {
        let _ = writeln!(out, "| {} |", rec.iter().collect::<Vec<_>>().join(" | "));
    }
    out
}

/// Off-diagonal index pairs of a correlation matrix.
const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn per_field_correlations(data: &ReportData, method: CorrelationMethod, md: &mut String) {
    let mut by_field: BTreeMap<&str, Vec<GroundTruthSample>> = BTreeMap::new();
    for s in &data.ground_truth {
        by_field.entry(s.field_id.as_str()).or_default().push(s.clone());
    }
    let rows: Vec<(&str, [f64; 3])> = by_field
        .iter()
        .filter_map(|(f, ss)| {
            let m = correlation_matrix(&correlation_rows(ss), method).ok()?;
            Some((*f, PAIRS.map(|(i, j)| m[i][j])))
        })
        .collect();
    if rows.is_empty() {
        return;
    }
    let pair_names = PAIRS.map(|(i, j)| format!("{}-{}", CORRELATION_LABELS[i], CORRELATION_LABELS[j]));
    let _ = writeln!(md, "## {method:?} correlation per field\n");
    let _ = writeln!(md, "| field | {} |", pair_names.join(" | "));
    md.push_str("|---|---|---|---|\n");
    for (f, v) in &rows {
        let _ = writeln!(md, "| {f} | {} |", v.map(|x| format!("{x:.6}")).join(" | "));
    }
    let n = rows.len() as f64;
    let mean = [0, 1, 2].map(|k| rows.iter().map(|(_, v)| v[k]).sum::<f64>() / n);
    let _ = writeln!(md, "| Mean over fields | {} |\n", mean.map(|x| format!("{x:.6}")).join(" | "));
}

fn label_spread(data: &ReportData, md: &mut String) {
    let rows: Vec<&LabelCountRow> = data.label_counts.iter().filter(|r| r.label_variance.is_some()).collect();
    if rows.is_empty() {
        return;
    }
    md.push_str("## Weak-label spread\n\n| labeler | field | mean | variance |\n|---|---|---|---|\n");
    for r in rows {
        let lab = r.labeler.map(|t| t.display_name()).unwrap_or("NA");
        let _ = writeln!(md, "| {lab} | {} | {} | {} |", r.field, f4(r.label_mean), f4(r.label_variance));
    }
    md.push('\n');
}

fn summary(data: &ReportData, tables: &[(&str, &str, Vec<u8>)]) -> String {
    let mut md = String::from("# CF labeling report\n\n");
    for method in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
        if let Ok(m) = correlation_matrix(&correlation_rows(&data.ground_truth), method) {
            let _ = writeln!(md, "## {method:?} correlation, pooled\n");
            let _ = writeln!(md, "| {method:?} | {} |", CORRELATION_LABELS.join(" | "));
            md.push_str("|---|---|---|---|\n");
            for (i, row) in m.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(md, "| {} | {} |", CORRELATION_LABELS[i], cells.join(" | "));
            }
            md.push('\n');
        }
        per_field_correlations(data, method, &mut md);
    }
    for (_, title, bytes) in tables {
        let _ = writeln!(md, "## {title}\n");
        md.push_str(&markdown_table(bytes));
        md.push('\n');
    }
    label_spread(data, &mut md);
    let (tags, _) = generative_grid(data);
    let best = tags
        .iter()
        .filter_map(|t| mean_rmse(data.generative.iter().filter(|r| r.labeler == Some(*t))).map(|m| (*t, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((t, m)) = best {
        let _ = writeln!(md, "Lowest mean generative RMSE: {} ({m:.4}).\n", t.display_name());
    }
    let failures: Vec<&EvalResult> = data.generative.iter().chain(&data.neural).filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        md.push_str("## Failed cells\n\n");
        for r in failures {
            let _ = writeln!(md, "- {} on {}: {}", r.model_tag, r.fold, r.error.as_deref().unwrap_or(""));
        }
        md.push('\n');
    }
    md.push_str(
        "RMSE values are in min-max scaled CF units of each fold's training data. \
         Generative predictions use the conditional mean (GMM, KDE) or the neighbor mean (K-NN).\n",
    );
    md
}

/// Writes the report tables, `summary.md`, one figure per field and
/// `manifest.json` into `out_dir`. Output bytes depend only on `data`.
pub fn emit_report(data: &ReportData, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if data.generative.is_empty() && data.neural.is_empty() {
        return Err(Error::InsufficientData("no evaluation results to report".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = vec![
        ("table_iv.csv", "GMM information criteria", table_iv(data)?),
        ("table_v.csv", "Leave-one-field-out splits", table_v(data)?),
        ("table_vi.csv", "Generative model RMSE", table_vi(data)?),
        ("table_vii.csv", "Weak labels per field", table_vii(data)?),
        ("table_viii.csv", "Network RMSE", table_viii(data)?),
    ];
    let mut files: Vec<(String, Vec<u8>)> = tables.iter().map(|(n, _, b)| (n.to_string(), b.clone())).collect();
    files.push(("summary.md".into(), summary(data, &tables).into_bytes()));
    let mut by_field: BTreeMap<&str, Vec<&GroundTruthSample>> = BTreeMap::new();
    for s in &data.ground_truth {
        by_field.entry(s.field_id.as_str()).or_default().push(s);
    }
    for (field, rows) in &by_field {
        files.push((format!("fig_cf_ndvi_{field}.svg"), figure(field, rows).into_bytes()));
    }
    let digests: Vec<serde_json::Value> = files
        .iter()
        .map(|(name, bytes)| serde_json::json!({"file": name, "sha256": hex::encode(Sha256::digest(bytes))}))
        .collect();
    let manifest = serde_json::json!({
        "run": data.manifest,
        "generative_results": data.generative,
        "neural_results": data.neural,
        "files": digests,
    });
    files.push(("manifest.json".into(), (serde_json::to_string_pretty(&manifest)? + "\n").into_bytes()));

    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{count_by_field, leave_one_field_out};

    fn result(tag: ModelTag, fold: &str, rmse: f64) -> EvalResult {
        EvalResult {
            model_tag: tag.as_str().into(),
            labeler: Some(tag),
            network: None,
            input_size: None,
            fold: fold.into(),
            rmse: Some(rmse),
            baseline_rmse: None,
            n_test: 4,
            error: None,
            manifest: serde_json::json!({"seed": 0}),
        }
    }

    fn sample_data() -> ReportData {
        let fields = [("A", 59), ("B", 24), ("C", 16), ("D", 28)];
        let names: Vec<&str> = fields.iter().flat_map(|(f, n)| std::iter::repeat_n(*f, *n)).collect();
        let folds = leave_one_field_out(&count_by_field(names)).unwrap();
        ReportData {
            generative: folds
                .iter()
                .flat_map(|f| {
                    [ModelTag::Gmm, ModelTag::Knn, ModelTag::Kde]
                        .map(|t| result(t, &f.test_field, 0.1 + f.test_count as f64 / 1000.0))
                })
                .collect(),
            folds,
            ..Default::default()
        }
    }

    #[test]
    fn table_v_train_counts() {
        let data = sample_data();
        let text = String::from_utf8(table_v(&data).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "train_fields,train_samples,test_field,test_samples");
        assert_eq!(lines[1], "\"B, C, D\",68,A,59");
        assert_eq!(lines[2], "\"A, C, D\",103,B,24");
        assert_eq!(lines[3], "\"A, B, D\",111,C,16");
        assert_eq!(lines[4], "\"A, B, C\",99,D,28");
    }

    #[test]
    fn table_vi_has_mean_row() {
        let text = String::from_utf8(table_vi(&sample_data()).unwrap()).unwrap();
        let last = text.lines().last().unwrap();
        // (0.159 + 0.124 + 0.116 + 0.128) / 4
        assert_eq!(last, "Mean,0.1318,0.1318,0.1318");
    }

    #[test]
    fn empty_results_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&ReportData::default(), dir.path()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let data = sample_data();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_report(&data, a.path()).unwrap();
        let fb = emit_report(&data, b.path()).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn summary_reports_per_field_correlations_and_label_spread() {
        let start = chrono::NaiveDate::from_ymd_opt(2020, 7, 1).unwrap();
        let mut data = sample_data();
        for (field, sign) in [("A", 1.0), ("B", -1.0)] {
            for i in 0..5 {
                data.ground_truth.push(GroundTruthSample {
                    field_id: field.into(),
                    zone_id: format!("z{i}"),
                    date: start + chrono::Days::new(7 * i),
                    ndvi_mean: 0.1 * i as f64,
                    cf_pa: 3000.0 + sign * 100.0 * i as f64,
                });
            }
        }
        data.label_counts.push(LabelCountRow {
            field: "A".into(),
            counts: BTreeMap::from([(32, 16)]),
            timesteps: 6,
            labeler: Some(ModelTag::Kde),
            label_mean: Some(0.5),
            label_variance: Some(0.01),
        });
        let md = summary(&data, &[]);
        assert!(md.contains("| A | 1.000000 | 1.000000 | 1.000000 |"), "{md}");
        assert!(md.contains("| B | -1.000000 | 1.000000 | -1.000000 |"), "{md}");
        assert!(md.contains("| Mean over fields | 0.000000 | 1.000000 | 0.000000 |"), "{md}");
        assert!(md.contains("| KDE | A | 0.5000 | 0.0100 |"), "{md}");
    }
}
