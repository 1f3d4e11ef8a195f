use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};

/// One cross-validation split, as participant positions in the cohort.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified K-fold partition of `labels`.
///
/// Positives and negatives are shuffled separately, laid end to end and dealt
/// round-robin, so each class is spread evenly and fold sizes differ by at
/// most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} available samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assignment = vec![0usize; labels.len()];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = slot % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// Stratified folds over a cohort's labels.
pub fn split_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<Vec<Fold>> {
    stratified_folds(&cohort.labels(), k, seed)
}
