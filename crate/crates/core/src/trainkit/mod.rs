//! Training, evaluation metrics, K-fold cross-validation, cross-cohort
//! evaluation and occlusion saliency.
//!
//! Training is single-threaded and fully determined by the seed in
//! [`Hyperparams`]; cross-validation may run folds on several threads
//! without changing any result.

mod crossval;
mod hyper;
mod metrics;
mod optim;
mod saliency;
mod train;

#[cfg(test)]
mod tests;

pub use crossval::{
    crossval, crossval_observed, fold_seed, CrossValConfig, CrossValResult, FitEvent, FoldResult, MetricSummary,
};
pub use hyper::{Hyperparams, Optimizer};
pub use metrics::{
    auc, confusion, evaluate, migrate_eval, predict_scores, roc_curve, write_roc_csv, Confusion, MetricsReport, RocPoint,
    DEFAULT_THRESHOLD, METRIC_NAMES,
};
pub use optim::OptimizerState;
pub use saliency::{occlusion_saliency, Heatmap, OCCLUSION_GRAY};
pub use train::{fit_params, train, train_observed, EpochRecord, Trained};
