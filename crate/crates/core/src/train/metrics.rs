//! Ranking metrics with exact tie handling.

use crate::error::{Error, Result};

fn check(labels: &[u8], scores: &[f64]) -> Result<(u64, u64)> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!("{} labels but {} scores", labels.len(), scores.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    Ok((pos, labels.len() as u64 - pos))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve as the normalised Mann–Whitney statistic:
/// the fraction of (positive, negative) pairs ranked correctly, ties ½.
pub fn auc_roc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check(labels, scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC-ROC needs both classes".into()));
    }
    // Twice the number of concordant pairs, plus one per tied pair.
    let mut twice: u128 = 0;
    let mut neg_below = neg;
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let n = group.len() as u128 - p;
        neg_below -= n as u64;
        twice += p * (2 * neg_below as u128 + n);
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision over the distinct score thresholds, highest first:
/// Σ (R_k − R_{k−1}) · P_k. Tied scores enter together, so constant
/// scores give the prevalence.
pub fn auc_pr(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (pos, _) = check(labels, scores)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("AUC-PR needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&i| labels[i] == 1).count() as u64;
        tp += p;
        fp += group.len() as u64 - p;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}
