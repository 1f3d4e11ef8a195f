use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapley::{global_importance, shapley_exact, shapley_sampled, ShapleyMode, ShapleyReport, ValueFunction, MAX_EXACT_FEATURES};
use super::stats::{rank_by_pearson, RankedIndicator, LABEL_TARGET};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::{Inputs, Mode, ModelParams, META_MEAN};
use crate::ndtensor::Tensor;

/// Force-included in the final set.
pub const GENDER: &str = "MALE";
/// Lifestyle indicators appended to the Pearson stage.
pub const AUGMENT_WITH: [&str; 2] = ["SMOKE", "DRINK"];
/// Reference eight-indicator set used by the fixed-selection experiments.
pub const METADATA8: [&str; 8] = ["BMI", "TG", "HPT", "HLP", "HDL", "WEIGHT", "DRINK", "MALE"];
/// The three-indicator set, intersected with what the cohort offers.
pub const FINAL3: [&str; 3] = ["BMI", "WEIGHT", "MALE"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Indicators kept by the Pearson stage (lifestyle indicators excluded).
    pub stage1_k: usize,
    /// Indicators taken from the Shapley ranking besides gender.
    pub shapley_k: usize,
    /// Participants whose predictions are explained.
    pub explain_samples: usize,
    /// Permutations per participant when exact enumeration is too large.
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { stage1_k: 21, shapley_k: 7, explain_samples: 100, n_perm: 2000, seed: 0 }
    }
}

/// Scores behind each stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Pearson ranking of every candidate of the first stage.
    pub pearson: Vec<RankedIndicator>,
    /// Mean `|phi|` ranking over the augmented set.
    pub shapley: Vec<(String, f64)>,
    pub shapley_mode: ShapleyMode,
    pub explained_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub stage1: Vec<String>,
    pub stage1_augmented: Vec<String>,
    pub final8: Vec<String>,
    pub final3: Vec<String>,
    pub provenance: Provenance,
}

/// Coalition value of a metadata-only model for one participant:
/// the predicted probability with every indicator outside the coalition
/// replaced by its training mean.
pub struct ModelValue<'a> {
    model: &'a ModelParams<f64>,
    row: Vec<f64>,
    baseline: Vec<f64>,
}

impl<'a> ModelValue<'a> {
    /// `row` holds the participant's values in the model's indicator order.
    pub fn new(model: &'a ModelParams<f64>, row: Vec<f64>) -> Result<Self> {
        if model.config().mode != Mode::Metadata {
            return Err(Error::Config("Shapley values need a metadata-only model".into()));
        }
        let baseline = model.get(META_MEAN).expect("metadata model has means").to_vec();
        if row.len() != baseline.len() {
            return Err(Error::Dimension(format!("row has {} values, model takes {}", row.len(), baseline.len())));
        }
        Ok(ModelValue { model, row, baseline })
    }
}

impl ValueFunction for ModelValue<'_> {
    fn values(&self, coalitions: &[u64]) -> Result<Vec<f64>> {
        let p = self.row.len();
        let mut data = Vec::with_capacity(coalitions.len() * p);
        for &s in coalitions {
            data.extend((0..p).map(|j| if s >> j & 1 == 1 { self.row[j] } else { self.baseline[j] }));
        }
        let inputs = Inputs {
            images: None,
            metadata: Some(Tensor::new(&[coalitions.len(), p], data)?),
            labels: vec![0; coalitions.len()],
            aux_targets: None,
        };
        self.model.predict(&inputs)
    }
}

/// Shapley values of `model` for the participants at `indices`.
pub fn explain(cohort: &Cohort, model: &ModelParams<f64>, indices: &[usize], n_perm: usize, seed: u64) -> Result<ShapleyReport> {
    let names = model.config().indicators.clone();
    let cols = cohort.indices_of(&names)?;
    let p = names.len();
    let mode = if p <= MAX_EXACT_FEATURES { ShapleyMode::Exact } else { ShapleyMode::Sampled { n_perm, seed } };
    let mut phi = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let m = cohort.participant(i).metadata();
        let value = ModelValue::new(model, cols.iter().map(|&j| m[j]).collect())?;
        phi.push(match mode {
            ShapleyMode::Exact => shapley_exact(&value, p)?,
            // one seed per explained participant, derived from the run seed
            ShapleyMode::Sampled { .. } => shapley_sampled(&value, p, n_perm, seed.wrapping_add(k as u64))?.phi,
        });
    }
    ShapleyReport::new(names, phi, "model probability, out-of-coalition indicators at training means", mode)
}

/// First selection stage: the top `k` indicators by Pearson correlation
/// with the label, lifestyle indicators left out, then the lifestyle
/// indicators appended.
pub fn pearson_stage(cohort: &Cohort, k: usize) -> Result<(Vec<RankedIndicator>, Vec<String>, Vec<String>)> {
    for name in AUGMENT_WITH {
        cohort.index_of(name).map_err(|_| Error::Config(format!("cohort lacks {name}, needed for selection")))?;
    }
    let all = rank_by_pearson(cohort, LABEL_TARGET, cohort.indicators().len())?;
    let candidates: Vec<RankedIndicator> =
        all.entries.into_iter().filter(|e| !AUGMENT_WITH.contains(&e.name.as_str())).collect();
    if candidates.len() < k {
        return Err(Error::Config(format!("only {} ranked candidates for a first stage of {k}", candidates.len())));
    }
    let stage1: Vec<String> = candidates[..k].iter().map(|e| e.name.clone()).collect();
    let mut augmented = stage1.clone();
    augmented.extend(AUGMENT_WITH.iter().map(|s| s.to_string()));
    Ok((candidates, stage1, augmented))
}

/// Two-stage indicator selection.
///
/// Stage one keeps the top `stage1_k` indicators by Pearson correlation and
/// appends SMOKE and DRINK. `model` must be a metadata-only model trained on
/// exactly that augmented set. Stage two ranks the augmented set by mean
/// absolute Shapley value over `explain_samples` participants; the final
/// eight are gender plus the `shapley_k` best other indicators.
pub fn select_indicators(cohort: &Cohort, model: &ModelParams<f64>, config: &SelectionConfig) -> Result<SelectionResult> {
    let (pearson, stage1, stage1_augmented) = pearson_stage(cohort, config.stage1_k)?;
    let mut want = stage1_augmented.clone();
    let mut have = model.config().indicators.clone();
    want.sort();
    have.sort();
    if want != have {
        return Err(Error::Config(format!(
            "model indicators {:?} differ from the augmented first stage {:?}",
            model.config().indicators,
            stage1_augmented
        )));
    }
    if config.explain_samples == 0 {
        return Err(Error::Parameter("explain_samples must be positive".into()));
    }
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    order.truncate(config.explain_samples);
    let report = explain(cohort, model, &order, config.n_perm, config.seed)?;
    let ranking = global_importance(&report);

    let mut final8: Vec<String> = ranking
        .iter()
        .map(|(name, _)| name.clone())
        .filter(|name| name != GENDER)
        .take(config.shapley_k)
        .collect();
    if cohort.index_of(GENDER).is_ok() {
        final8.push(GENDER.to_string());
    }
    let final3 = FINAL3.iter().filter(|n| final8.iter().any(|f| f == *n)).map(|s| s.to_string()).collect();
    Ok(SelectionResult {
        stage1,
        stage1_augmented,
        final8,
        final3,
        provenance: Provenance {
            pearson,
            shapley: ranking,
            shapley_mode: report.mode,
            explained_ids: order.iter().map(|&i| cohort.participant(i).id().to_string()).collect(),
        },
    })
}
