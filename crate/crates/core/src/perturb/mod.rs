//! Faithfulness evaluation by removing the least relevant inputs first.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{explain_all, AttributionReport, ExplainOptions, ExplainerKind};
use crate::data::vocab::PAD_ID;
use crate::data::MultimodalRecord;
use crate::error::{Error, Result};
use crate::model::{Modalities, Modality, Model};
use crate::train::auc_roc;

/// Removal fractions 0.0, 0.1, …, 0.9.
pub const DEFAULT_FRACTIONS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// One removable input: an (hour, column) event cell, a token position, or
/// a (step, channel) vitals cell. `index` is row-major within the modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub modality: Modality,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalOrder {
    /// Least relevant first.
    #[default]
    Ascending,
    Descending,
}

/// Every removable unit sorted by |relevance| ascending, ties by
/// (modality, index). `[CLS]` is never removable.
pub fn rank_features(report: &AttributionReport) -> Vec<Unit> {
    let mut units: Vec<(f64, Unit)> = Vec::new();
    for modality in Modality::ALL {
        let skip = usize::from(modality == Modality::Notes);
        for (index, a) in report.relevance(modality).iter().enumerate().skip(skip) {
            units.push((a.abs(), Unit { modality, index }));
        }
    }
    units.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    units.into_iter().map(|(_, u)| u).collect()
}

/// Copy of `r` with the given units at their baseline: 0 for grid cells
/// (the normalised mean), `[PAD]` for tokens.
pub fn perturb(r: &MultimodalRecord, removed: &[Unit]) -> Result<MultimodalRecord> {
    let mut out = r.clone();
    for u in removed {
        let len = match u.modality {
            Modality::Events => out.events.values.numel(),
            Modality::Notes => out.notes.len(),
            Modality::Vitals => out.vitals.values.numel(),
        };
        if u.index >= len {
            return Err(Error::InvalidArgument(format!(
                "stay {}: {} unit {} out of range ({len})",
                r.stay_id, u.modality, u.index
            )));
        }
        match u.modality {
            Modality::Events => out.events.values.data_mut()[u.index] = 0.0,
            Modality::Vitals => out.vitals.values.data_mut()[u.index] = 0.0,
            Modality::Notes if u.index == 0 => {
                return Err(Error::InvalidArgument(format!("stay {}: [CLS] cannot be removed", r.stay_id)))
            }
            Modality::Notes => out.notes.ids[u.index] = PAD_ID,
        }
    }
    Ok(out)
}

/// Trapezoid area under `values` over `fractions`, divided by the span.
pub fn area_under(fractions: &[f64], values: &[f64]) -> Result<f64> {
    if fractions.len() != values.len() || fractions.is_empty() {
        return Err(Error::InvalidArgument("fractions and values must be non-empty and aligned".into()));
    }
    if fractions.len() == 1 {
        return Ok(values[0]);
    }
    let span = fractions[fractions.len() - 1] - fractions[0];
    let area: f64 = fractions
        .windows(2)
        .zip(values.windows(2))
        .map(|(f, v)| (f[1] - f[0]) * (v[0] + v[1]) / 2.0)
        .sum();
    Ok(area / span)
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("empty fraction grid".into()));
    }
    if fractions.iter().any(|f| !(0.0..1.0).contains(f)) || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("fractions must increase within [0, 1): {fractions:?}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub explainer: ExplainerKind,
    pub order: RemovalOrder,
    pub fractions: Vec<f64>,
    pub auc_roc: Vec<f64>,
    /// Normalised area under `auc_roc`.
    pub au: f64,
}

/// Removal curve from precomputed reports (one per record, same order).
/// Only units of the model's enabled modalities are ranked.
pub fn curve_from_reports(
    model: &Model,
    records: &[MultimodalRecord],
    reports: &[AttributionReport],
    fractions: &[f64],
    order: RemovalOrder,
) -> Result<PerturbationCurve> {
    check_fractions(fractions)?;
    let Some(first) = reports.first() else {
        return Err(Error::InvalidArgument("no records to perturb".into()));
    };
    if reports.len() != records.len() {
        return Err(Error::InvalidArgument(format!("{} reports for {} records", reports.len(), records.len())));
    }
    let explainer = first.explainer;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let enabled: Modalities = model.config.modalities;
    let rankings: Vec<Vec<Unit>> = reports
        .iter()
        .zip(records)
        .map(|(rep, r)| {
            if rep.stay_id != r.stay_id {
                return Err(Error::InvalidArgument(format!("report for stay {} paired with stay {}", rep.stay_id, r.stay_id)));
            }
            let mut units: Vec<Unit> = rank_features(rep).into_iter().filter(|u| enabled.contains(u.modality)).collect();
            if order == RemovalOrder::Descending {
                units.reverse();
            }
            Ok(units)
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let mut scores = Vec::with_capacity(records.len());
        for (r, units) in records.iter().zip(&rankings) {
            let k = (f * units.len() as f64 + 1e-9).floor() as usize;
            let p = if k == 0 { model.predict(r)? } else { model.predict(&perturb(r, &units[..k])?)? };
            scores.push(p.death_probability());
        }
        values.push(auc_roc(&labels, &scores)?);
    }
    Ok(PerturbationCurve {
        explainer,
        order,
        au: area_under(fractions, &values)?,
        fractions: fractions.to_vec(),
        auc_roc: values,
    })
}

/// Explains every record for class 1, then traces the removal curve.
pub fn perturbation_curve(
    model: &Model,
    records: &[MultimodalRecord],
    kind: ExplainerKind,
    opts: &ExplainOptions,
    fractions: &[f64],
    order: RemovalOrder,
) -> Result<PerturbationCurve> {
    check_fractions(fractions)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument("perturbation needs a test set with both classes".into()));
    }
    let reports = explain_all(model, records, kind, 1, opts)?;
    curve_from_reports(model, records, &reports, fractions, order)
}

/// Ascending-order curves for each explainer on the same grid.
pub fn compare_explainers(
    model: &Model,
    records: &[MultimodalRecord],
    kinds: &[ExplainerKind],
    opts: &ExplainOptions,
    fractions: &[f64],
) -> Result<Vec<PerturbationCurve>> {
    kinds
        .iter()
        .map(|&k| {
            let curve = perturbation_curve(model, records, k, opts, fractions, RemovalOrder::Ascending)?;
            log::info!("{k}: AU-AUC-ROC {:.4}", curve.au);
            Ok(curve)
        })
        .collect()
}

/// `explainer,fraction,auc_roc` rows.
pub fn write_curves_csv(curves: &[PerturbationCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["explainer", "fraction", "auc_roc"])?;
    for c in curves {
        for (f, a) in c.fractions.iter().zip(&c.auc_roc) {
            w.write_record([c.explainer.name().to_string(), f.to_string(), a.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `explainer,au` rows.
pub fn write_summary_csv(curves: &[PerturbationCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["explainer", "au"])?;
    for c in curves {
        w.write_record([c.explainer.name().to_string(), c.au.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Whitespace table, one column per explainer, for plotting tools.
pub fn plot_table(curves: &[PerturbationCurve]) -> String {
    let mut out = String::from("# fraction");
    for c in curves {
        out.push(' ');
        out.push_str(c.explainer.name());
    }
    out.push('\n');
    let Some(first) = curves.first() else { return out };
    for (i, f) in first.fractions.iter().enumerate() {
        out.push_str(&format!("{f:.2}"));
        for c in curves {
            match c.auc_roc.get(i) {
                Some(a) => out.push_str(&format!(" {a:.6}")),
                None => out.push_str(" nan"),
            }
        }
        out.push('\n');
    }
    out
}

/// Reads back the `explainer,au` summary.
pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<(ExplainerKind, f64)>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let kind: ExplainerKind = row.get(0).unwrap_or_default().parse()?;
        let au: f64 = row
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Data(format!("bad AU value in {}", path.as_ref().display())))?;
        out.push((kind, au));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_of_constant_and_line() {
        let f = DEFAULT_FRACTIONS;
        assert!((area_under(&f, &[0.8; 10]).unwrap() - 0.8).abs() < 1e-12);
        let line: Vec<f64> = f.iter().map(|x| 0.9 - 0.4 * x / 0.9).collect();
        assert!((area_under(&f, &line).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(area_under(&[0.0], &[0.6]).unwrap(), 0.6);
        assert!(area_under(&[], &[]).is_err());
    }

    #[test]
    fn fraction_grid_is_validated() {
        assert!(check_fractions(&DEFAULT_FRACTIONS).is_ok());
        assert!(check_fractions(&[0.0, 0.0]).is_err());
        assert!(check_fractions(&[0.5, 1.0]).is_err());
        assert!(check_fractions(&[]).is_err());
    }
}
