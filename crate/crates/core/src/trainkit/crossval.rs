use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::hyper::Hyperparams;
use super::metrics::{predict_scores, roc_curve, MetricsReport, RocPoint, METRIC_NAMES};
use super::train::{train_observed, EpochRecord};
use crate::cohort::{split_kfold, Cohort, Fold};
use crate::error::{Error, Result};

/// Cross-validation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub k: usize,
    /// Independent partitions, each with its own shuffle.
    pub repeats: usize,
    /// Folds trained concurrently. Results do not depend on it.
    pub jobs: usize,
    pub threshold: f64,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig { k: 7, repeats: 1, jobs: 1, threshold: 0.5 }
    }
}

/// What one fold did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_ids: Vec<String>,
    pub report: MetricsReport,
    pub history: Vec<EpochRecord>,
    /// Held-out ROC vertices; empty when the fold has one class.
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// Per-metric aggregate over folds. A metric undefined in some fold is
/// aggregated over the folds where it is defined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: Option<f64>,
    pub ss: Option<f64>,
    pub sp: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub auc: Option<f64>,
}

impl MetricSummary {
    fn set(&mut self, name: &str, value: Option<f64>) {
        let slot = match name {
            "acc" => &mut self.acc,
            "ss" => &mut self.ss,
            "sp" => &mut self.sp,
            "ppv" => &mut self.ppv,
            "npv" => &mut self.npv,
            _ => &mut self.auc,
        };
        *slot = value;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub config: CrossValConfig,
    pub hyper: Hyperparams,
    pub selection: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub mean: MetricSummary,
    /// Sample standard deviation; `None` with fewer than two defined values.
    pub sd: MetricSummary,
    pub warnings: Vec<String>,
}

/// Passed to the instrumentation hook of [`crossval_observed`] each time a
/// fold fits its standardization statistics.
#[derive(Clone, Copy, Debug)]
pub struct FitEvent<'a> {
    pub repeat: usize,
    pub fold: usize,
    pub fitted_on: &'a [usize],
    pub held_out: &'a [usize],
}

/// Seed of one fold's model, derived from the run seed.
pub fn fold_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    // splitmix64 finalizer over a distinct counter per fold
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + (repeat as u64) * 1024 + fold as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stratified K-fold cross-validation. Statistics and weights of each fold
/// come from its training split only.
pub fn crossval(cohort: &Cohort, selection: &[String], hyper: &Hyperparams, cv: &CrossValConfig) -> Result<CrossValResult> {
    crossval_observed(cohort, selection, hyper, cv, &|_| {})
}

/// [`crossval`] with a hook that sees which participants each fold's
/// standardization statistics are fitted on.
pub fn crossval_observed(
    cohort: &Cohort,
    selection: &[String],
    hyper: &Hyperparams,
    cv: &CrossValConfig,
    hook: &(dyn Fn(FitEvent<'_>) + Sync),
) -> Result<CrossValResult> {
    if cv.k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {}", cv.k)));
    }
    if cv.repeats == 0 || cv.jobs == 0 {
        return Err(Error::Config("repeats and jobs must be positive".into()));
    }
    hyper.validate()?;
    let mut tasks: Vec<(usize, usize, Fold)> = Vec::new();
    for r in 0..cv.repeats {
        for (f, fold) in split_kfold(cohort, cv.k, hyper.seed.wrapping_add(r as u64))?.into_iter().enumerate() {
            tasks.push((r, f, fold));
        }
    }
    let run = |(r, f, fold): &(usize, usize, Fold)| -> Result<FoldResult> {
        let mut fold_hyper = hyper.clone();
        fold_hyper.seed = fold_seed(hyper.seed, *r, *f);
        let on_fit = |fitted_on: &[usize]| hook(FitEvent { repeat: *r, fold: *f, fitted_on, held_out: &fold.test });
        let trained = train_observed::<f64>(cohort, &fold.train, selection, &fold_hyper, &on_fit)?;
        let scores = predict_scores(&trained.params, cohort, &fold.test)?;
        let labels: Vec<u8> = fold.test.iter().map(|&i| cohort.participant(i).label()).collect();
        let report = MetricsReport::from_scores(&scores, &labels, cv.threshold)?;
        Ok(FoldResult {
            repeat: *r,
            fold: *f,
            seed: fold_hyper.seed,
            train_size: fold.train.len(),
            test_ids: fold.test.iter().map(|&i| cohort.participant(i).id().to_string()).collect(),
            report,
            history: trained.history,
            roc: roc_curve(&scores, &labels).unwrap_or_default(),
        })
    };

    let results: Vec<Result<FoldResult>> = if cv.jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<FoldResult>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..cv.jobs.min(tasks.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() {
                        break;
                    }
                    let out = run(&tasks[i]);
                    slots.lock().expect("no worker panicked")[i] = Some(out);
                });
            }
        });
        slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every task ran")).collect()
    };
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cv.clone(), hyper.clone(), selection.to_vec(), folds))
}

fn aggregate(config: CrossValConfig, hyper: Hyperparams, selection: Vec<String>, folds: Vec<FoldResult>) -> CrossValResult {
    let mut mean = MetricSummary::default();
    let mut sd = MetricSummary::default();
    let mut warnings = Vec::new();
    for name in METRIC_NAMES {
        let values: Vec<f64> = folds.iter().filter_map(|f| f.report.metric(name)).collect();
        let skipped = folds.len() - values.len();
        if skipped > 0 {
            warnings.push(format!("{name} undefined in {skipped} of {} folds, excluded from its mean", folds.len()));
        }
        if values.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        mean.set(name, Some(m));
        if values.len() > 1 {
            let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
            sd.set(name, Some((ss / (n - 1.0)).sqrt()));
        }
    }
    CrossValResult { config, hyper, selection, folds, mean, sd, warnings }
}
