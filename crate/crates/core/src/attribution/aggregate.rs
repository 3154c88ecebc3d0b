use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::AttributionReport;
use crate::data::{DatasetMeta, Vocabulary};
use crate::error::{Error, Result};

/// Default minimum cohort occurrences for a word to be ranked.
pub const MIN_TOKEN_COUNT: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub mean: f64,
    /// Records (events, vitals) or token occurrences (notes) averaged over.
    pub count: usize,
}

/// Cohort-level relevance, each list sorted by descending mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Per named event feature: relevance summed over hours and the
    /// feature's columns (mask included), averaged over records.
    pub events: Vec<FeatureScore>,
    /// Per vocabulary word: mean relevance per occurrence.
    pub tokens: Vec<FeatureScore>,
    /// Per channel: relevance summed over steps, averaged over records.
    pub vitals: Vec<FeatureScore>,
}

impl FeatureRanking {
    pub fn top_events(&self, k: usize) -> Vec<&str> {
        self.events.iter().take(k).map(|f| f.name.as_str()).collect()
    }

    pub fn top_tokens(&self, k: usize) -> Vec<&str> {
        self.tokens.iter().take(k).map(|f| f.name.as_str()).collect()
    }

    pub fn top_vitals(&self, k: usize) -> Vec<&str> {
        self.vitals.iter().take(k).map(|f| f.name.as_str()).collect()
    }
}

fn ranked(map: BTreeMap<String, (f64, usize)>, min_count: usize) -> Vec<FeatureScore> {
    let mut out: Vec<FeatureScore> = map
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_count.max(1))
        .map(|(name, (sum, count))| FeatureScore { name, mean: sum / count as f64, count })
        .collect();
    out.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.name.cmp(&b.name)));
    out
}

/// Aggregates per-record reports into cohort feature rankings. Words seen
/// fewer than `min_token_count` times are left out; reserved tokens are
/// never ranked.
pub fn aggregate_feature_attributions(
    reports: &[AttributionReport],
    meta: &DatasetMeta,
    min_token_count: usize,
) -> Result<FeatureRanking> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty cohort".into()));
    }
    let mut events: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut tokens: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut vitals: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports {
        let (hours, width) = r.events.dims2()?;
        if width != meta.event_columns.len() {
            return Err(Error::Shape(format!(
                "stay {}: {width} event columns, metadata has {}",
                r.stay_id,
                meta.event_columns.len()
            )));
        }
        let mut per_record: BTreeMap<&str, f64> = BTreeMap::new();
        for c in 0..width {
            let s: f64 = (0..hours).map(|t| r.events.get2(t, c)).sum();
            *per_record.entry(meta.event_feature_of(c)).or_default() += s;
        }
        for (name, s) in per_record {
            let e = events.entry(name.to_string()).or_default();
            e.0 += s;
            e.1 += 1;
        }

        let (steps, channels) = r.vitals.dims2()?;
        if channels != meta.vital_channels.len() {
            return Err(Error::Shape(format!(
                "stay {}: {channels} vital channels, metadata has {}",
                r.stay_id,
                meta.vital_channels.len()
            )));
        }
        for (c, name) in meta.vital_channels.iter().enumerate() {
            let s: f64 = (0..steps).map(|t| r.vitals.get2(t, c)).sum();
            let e = vitals.entry(name.clone()).or_default();
            e.0 += s;
            e.1 += 1;
        }

        for (&id, &a) in r.token_ids.iter().zip(&r.tokens) {
            if Vocabulary::is_reserved(id) {
                continue;
            }
            let word = meta
                .vocabulary
                .token(id)
                .ok_or_else(|| Error::Data(format!("token id {id} is outside the vocabulary")))?;
            let e = tokens.entry(word.to_string()).or_default();
            e.0 += a;
            e.1 += 1;
        }
    }
    Ok(FeatureRanking {
        events: ranked(events, 1),
        tokens: ranked(tokens, min_token_count),
        vitals: ranked(vitals, 1),
    })
}
