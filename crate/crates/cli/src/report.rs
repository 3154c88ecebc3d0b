//! Markdown summary of a run directory: discrimination, perturbation
//! faithfulness, top-k feature tables and per-record heat tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use xmmp::attribution::{read_reports_json, AttributionReport, ExplainerKind, FeatureRanking, FeatureScore};
use xmmp::data::DatasetMeta;
use xmmp::perturb::read_summary_csv;

use crate::commands::{CURVES_FILE, META_FILE, METRICS_FILE, SUMMARY_FILE};
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "report.md";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::io(path, e)),
    }
}

/// Rows of a CSV with a header, as strings.
fn read_table(path: &Path) -> Result<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().map(String::from).collect();
    let rows = reader.records().map(|r| r.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
    Ok(Some((header, rows)))
}

fn table(out: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn score_rows<'a>(scores: impl Iterator<Item = &'a FeatureScore>) -> Vec<Vec<String>> {
    scores.map(|s| vec![s.name.clone(), format!("{:+.5}", s.mean), s.count.to_string()]).collect()
}

fn feature_tables(out: &mut String, kind: ExplainerKind, ranking: &FeatureRanking, k: usize) {
    let _ = writeln!(out, "## Feature relevance: {kind}\n");
    for (name, list) in [("Events", &ranking.events), ("Tokens", &ranking.tokens), ("Vitals", &ranking.vitals)] {
        let _ = writeln!(out, "### {name}: top {k} positive\n");
        table(out, &["feature", "mean relevance", "count"], score_rows(list.iter().filter(|f| f.mean > 0.0).take(k)));
        let _ = writeln!(out, "### {name}: top {k} negative\n");
        table(out, &["feature", "mean relevance", "count"], score_rows(list.iter().rev().filter(|f| f.mean < 0.0).take(k)));
    }
}

/// One record: token relevance inline, and hour-by-feature and
/// step-by-channel grids (event columns summed per feature).
fn heat_tables(out: &mut String, rep: &AttributionReport, meta: &DatasetMeta, k: usize) {
    let _ = writeln!(
        out,
        "### Stay {} ({}, class {} logit {:.4}, residual {:.2e})\n",
        rep.stay_id, rep.explainer, rep.target_class, rep.target_value, rep.residual
    );
    let words: Vec<String> = rep
        .token_ids
        .iter()
        .zip(&rep.tokens)
        .map(|(&id, r)| format!("{}({:+.3})", meta.vocabulary.token(id).unwrap_or("?"), r))
        .collect();
    let _ = writeln!(out, "Tokens: {}\n", words.join(" "));

    let (hours, width) = rep.events.dims2().unwrap_or((0, 0));
    let mut per_feature: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in 0..width.min(meta.event_columns.len()) {
        let e = per_feature.entry(meta.event_feature_of(c)).or_insert_with(|| vec![0.0; hours]);
        for (h, v) in e.iter_mut().enumerate() {
            *v += rep.events.get2(h, c);
        }
    }
    let mut features: Vec<(&str, Vec<f64>)> = per_feature.into_iter().collect();
    features.sort_by(|a, b| {
        let mass = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
        mass(&b.1).total_cmp(&mass(&a.1)).then(a.0.cmp(b.0))
    });
    features.truncate(k);
    let mut header = vec!["hour"];
    header.extend(features.iter().map(|f| f.0));
    table(out, &header, (0..hours).map(|h| {
        let mut row = vec![h.to_string()];
        row.extend(features.iter().map(|f| format!("{:+.3}", f.1[h])));
        row
    }));

    let (steps, channels) = rep.vitals.dims2().unwrap_or((0, 0));
    let mut header = vec!["step"];
    header.extend(meta.vital_channels.iter().take(channels).map(String::as_str));
    table(out, &header, (0..steps).map(|s| {
        let mut row = vec![s.to_string()];
        row.extend((0..channels).map(|c| format!("{:+.3}", rep.vitals.get2(s, c))));
        row
    }));
}

/// Writes `run/report.md`. The perturbation summary is required; metrics,
/// curves and explain outputs are included when present.
pub fn write_report(run: &Path, top_k: usize, records: usize) -> Result<PathBuf> {
    let summary_path = run.join(SUMMARY_FILE);
    if !summary_path.exists() {
        return Err(CliError::Missing(summary_path));
    }
    let summary = read_summary_csv(&summary_path)?;
    let mut out = String::from("# Run report\n\n");

    if let Some((header, rows)) = read_table(&run.join(METRICS_FILE))? {
        out.push_str("## Discrimination\n\n");
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        table(&mut out, &header, rows);
    }

    out.push_str("## Perturbation faithfulness\n\nArea under the AUC-ROC curve as the least relevant inputs are removed first (higher is better).\n\n");
    table(&mut out, &["explainer", "AU-AUC-ROC"], summary.iter().map(|(k, au)| vec![k.to_string(), format!("{au:.4}")]));

    if let Some((_, rows)) = read_table(&run.join(CURVES_FILE))? {
        let mut fractions: Vec<String> = Vec::new();
        let mut curves: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for r in rows {
            if !fractions.contains(&r[1]) {
                fractions.push(r[1].clone());
            }
            curves.entry(r[0].clone()).or_default().insert(r[1].clone(), r[2].clone());
        }
        let names: Vec<&str> = summary.iter().map(|(k, _)| k.name()).filter(|n| curves.contains_key(*n)).collect();
        let mut header = vec!["fraction removed"];
        header.extend(&names);
        out.push_str("### AUC-ROC by fraction removed\n\n");
        table(&mut out, &header, fractions.iter().map(|f| {
            let mut row = vec![f.clone()];
            row.extend(names.iter().map(|n| {
                curves[*n].get(f).and_then(|v| v.parse::<f64>().ok()).map_or("".into(), |v| format!("{v:.4}"))
            }));
            row
        }));
    }

    let meta: Option<DatasetMeta> = read_json(&run.join(META_FILE))?;
    let mut heat_done = false;
    for kind in ExplainerKind::ALL.into_iter().rev() {
        if let Some(ranking) = read_json::<FeatureRanking>(&run.join(format!("ranking_{kind}.json")))? {
            feature_tables(&mut out, kind, &ranking, top_k);
        }
        let reports_path = run.join(format!("attributions_{kind}.json"));
        if let (false, Some(meta), true) = (heat_done, &meta, reports_path.exists()) {
            let reports = read_reports_json(&reports_path)?;
            let _ = writeln!(out, "## Per-record relevance: {kind}\n");
            for rep in reports.iter().take(records) {
                heat_tables(&mut out, rep, meta, top_k.min(8));
            }
            heat_done = true;
        }
    }

    let path = run.join(crate::report::REPORT_FILE);
    fs::write(&path, out).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
