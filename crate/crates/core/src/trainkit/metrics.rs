use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::{Inputs, ModelParams};
use crate::scalar::Scalar;

/// Decision threshold used unless a caller overrides it.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Confusion counts at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Dimension("no scores to evaluate".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Count outcomes, predicting positive iff `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_lengths(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ranks starting at 1, tied values sharing their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
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

/// Area under the ROC curve via the Mann-Whitney statistic, ties counting
/// one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One ROC vertex: predictions `>= threshold` are positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC vertices from (0, 0) at an infinite threshold down to (1, 1), one per
/// distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: s, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
    }
    Ok(points)
}

/// Write ROC vertices as `threshold,fpr,tpr` rows.
pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Classification metrics. Ratios with a zero denominator are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub counts: Confusion,
    pub acc: Option<f64>,
    /// Sensitivity `TP / (TP + FN)`.
    pub ss: Option<f64>,
    /// Specificity `TN / (TN + FP)`.
    pub sp: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub threshold: f64,
}

impl MetricsReport {
    /// Ratio metrics from counts alone; `auc` is left to the caller.
    pub fn from_counts(c: Confusion, auc: Option<f64>, threshold: f64) -> Self {
        MetricsReport {
            counts: c,
            acc: ratio(c.tp + c.tn, c.total()),
            ss: ratio(c.tp, c.tp + c.fn_),
            sp: ratio(c.tn, c.tn + c.fp),
            ppv: ratio(c.tp, c.tp + c.fp),
            npv: ratio(c.tn, c.tn + c.fn_),
            auc,
            threshold,
        }
    }

    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let c = confusion(scores, labels, threshold)?;
        let auc = match auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self::from_counts(c, auc, threshold))
    }

    /// Metric by its lower-case name (`acc`, `ss`, `sp`, `ppv`, `npv`, `auc`).
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "acc" => self.acc,
            "ss" => self.ss,
            "sp" => self.sp,
            "ppv" => self.ppv,
            "npv" => self.npv,
            "auc" => self.auc,
            _ => None,
        }
    }
}

/// Names accepted by [`MetricsReport::metric`], in report order.
pub const METRIC_NAMES: [&str; 6] = ["acc", "ss", "sp", "ppv", "npv", "auc"];

/// Eval-mode probabilities for the participants at `indices`.
pub fn predict_scores<T: Scalar>(model: &ModelParams<T>, cohort: &Cohort, indices: &[usize]) -> Result<Vec<f64>> {
    let inputs = Inputs::<T>::from_cohort(cohort, indices, model.config(), false)?;
    model.predict(&inputs)
}

/// Metrics of `model` on the participants at `indices`.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, cohort: &Cohort, indices: &[usize], threshold: f64) -> Result<MetricsReport> {
    let scores = predict_scores(model, cohort, indices)?;
    let labels: Vec<u8> = indices.iter().map(|&i| cohort.participant(i).label()).collect();
    MetricsReport::from_scores(&scores, &labels, threshold)
}

/// Evaluate a frozen model on every participant of another cohort, with the
/// standardization statistics it was trained with.
pub fn migrate_eval<T: Scalar>(model: &ModelParams<T>, target: &Cohort, threshold: f64) -> Result<MetricsReport> {
    if target.is_empty() {
        return Err(Error::Data("target cohort is empty".into()));
    }
    target.indices_of(&model.config().indicators)?;
    if model.config().mode.uses_image() && !target.has_images() {
        return Err(Error::Data(format!("cohort {} has no images for an image model", target.year_tag())));
    }
    let all: Vec<usize> = (0..target.len()).collect();
    evaluate(model, target, &all, threshold)
}
