//! Indicator analysis: correlation ranking, descriptive statistics, Welch
//! t-tests, Shapley attribution and the two-stage indicator selection.

mod selection;
mod shapley;
mod stats;

pub use selection::{
    explain, pearson_stage, select_indicators, ModelValue, Provenance, SelectionConfig, SelectionResult, AUGMENT_WITH,
    FINAL3, GENDER, METADATA8,
};
pub use shapley::{
    global_importance, permutation, shapley_exact, shapley_sampled, SampledShapley, ShapleyMode, ShapleyReport,
    ValueFunction, MAX_EXACT_FEATURES,
};
pub use stats::{
    mean_sd, pearson, rank_by_pearson, student_t_two_sided, summarize, ttest, CorrelationRanking, GroupStat,
    RankedIndicator, SummaryRow, TTest, LABEL_TARGET,
};
