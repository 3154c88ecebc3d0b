//! Stratified splitting and minority upsampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Fold assignment for k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    /// Fold of each record, in dataset order.
    pub fold_of: Vec<usize>,
    pub val_fraction_pct: usize,
    pub seed: u64,
}

impl SplitPlan {
    /// Stratified: each class is shuffled and dealt round-robin.
    pub fn stratified(labels: &[u8], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
        }
        let mut rng = rng_for(seed, "folds");
        let mut fold_of = vec![0; labels.len()];
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if idx.len() < k {
                return Err(Error::Data(format!("class {class} has {} records, fewer than {k} folds", idx.len())));
            }
            idx.shuffle(&mut rng);
            // Rotate the dealing start so fold sizes even out across classes.
            let offset = if class == 1 { labels.iter().filter(|&&y| y == 0).count() % k } else { 0 };
            for (j, i) in idx.into_iter().enumerate() {
                fold_of[i] = (j + offset) % k;
            }
        }
        Ok(Self { k, fold_of, val_fraction_pct: 20, seed })
    }

    /// (train indices, test indices) for one fold.
    pub fn fold(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let train = (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect();
        let test = (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect();
        (train, test)
    }
}

/// Splits `indices` into (train, validation) with `fraction` of each class
/// held out (at least one per class when the class has two or more).
pub fn stratified_holdout(indices: &[usize], labels: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let mut n_val = (idx.len() as f64 * fraction).round() as usize;
        if n_val == 0 && idx.len() >= 2 && fraction > 0.0 {
            n_val = 1;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Training order for one epoch: positives drawn with replacement until
/// both classes have equal counts, then everything shuffled.
pub fn upsample_positives(indices: &[usize], labels: &[u8], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let pos: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return Err(Error::Data("cannot upsample: no positive records".into()));
    }
    let neg = indices.len() - pos.len();
    let mut out = indices.to_vec();
    for _ in pos.len()..neg {
        out.push(pos[rng.gen_range(0..pos.len())]);
    }
    out.shuffle(rng);
    Ok(out)
}
