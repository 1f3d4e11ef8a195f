use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::cohort::{Cohort, IndicatorKind};
use crate::error::{Error, Result};

/// Pearson correlation coefficient.
///
/// Evaluated with the one-pass sum formula after shifting both vectors by
/// their first element, which removes most of the cancellation the raw
/// formula suffers for data far from zero. Clamped to `[-1, 1]`.
pub fn pearson(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("pearson: lengths {} and {} differ", p.len(), q.len())));
    }
    if p.len() < 2 {
        return Err(Error::Dimension("pearson needs at least two observations".into()));
    }
    let n = p.len() as f64;
    let (p0, q0) = (p[0], q[0]);
    let (mut sp, mut sq, mut spp, mut sqq, mut spq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a - p0, b - q0);
        sp += a;
        sq += b;
        spp += a * a;
        sqq += b * b;
        spq += a * b;
    }
    let var_p = n * spp - sp * sp;
    let var_q = n * sqq - sq * sq;
    if !(var_p > 0.0) || !(var_q > 0.0) {
        return Err(Error::Degenerate("pearson: a vector has zero variance".into()));
    }
    let rho = (n * spq - sp * sq) / (var_p.sqrt() * var_q.sqrt());
    if !rho.is_finite() {
        return Err(Error::NonFinite("pearson".into()));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn mean_sd(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("standard deviation needs 2 values, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Result of Welch's two-sample t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Two-sided Student-t tail probability `P(|T| >= |t|)` with `df` degrees
/// of freedom, via the regularized incomplete beta function.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::Parameter(format!("t = {t}, df = {df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    let p = checked_beta_reg(df / 2.0, 0.5, x).map_err(|e| Error::Numerical {
        epoch: 0,
        batch: 0,
        detail: format!("incomplete beta: {e}"),
    })?;
    Ok(p.clamp(0.0, 1.0))
}

/// Welch's unequal-variance t-test of `a` against `b`.
pub fn ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    let (ma, sa) = mean_sd(a)?;
    let (mb, sb) = mean_sd(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(Error::Degenerate("t-test: both groups are constant".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest { t, df, p: student_t_two_sided(t, df)? })
}

/// Per-group statistic of one indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupStat {
    /// Mean and sample sd; sd is absent for groups of one.
    Continuous { mean: f64, sd: Option<f64> },
    /// Count and percentage of ones.
    Binary { count: usize, percent: f64 },
}

impl GroupStat {
    /// `mean ± sd` or `n (pct%)`.
    pub fn display(&self) -> String {
        match self {
            GroupStat::Continuous { mean, sd: Some(sd) } => format!("{mean:.3} ± {sd:.3}"),
            GroupStat::Continuous { mean, sd: None } => format!("{mean:.3}"),
            GroupStat::Binary { count, percent } => format!("{count} ({percent:.1}%)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    /// Statistics for the label-0 and label-1 groups.
    pub negative: GroupStat,
    pub positive: GroupStat,
    /// Point-biserial correlation with the label; absent for constant columns.
    pub rho: Option<f64>,
    /// Welch t-test p-value between the groups; absent when undefined.
    pub p_value: Option<f64>,
}

/// Descriptive table split by label.
pub fn summarize(cohort: &Cohort) -> Result<Vec<SummaryRow>> {
    let labels = cohort.labels();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Degenerate("summary needs both label groups".into()));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    cohort
        .indicators()
        .iter()
        .map(|spec| {
            let col = cohort.column(&spec.name)?;
            let (neg, pos): (Vec<f64>, Vec<f64>) = {
                let mut g = (Vec::new(), Vec::new());
                for (v, &l) in col.iter().zip(&labels) {
                    if l == 1 { g.1.push(*v) } else { g.0.push(*v) }
                }
                g
            };
            let stat = |g: &[f64]| match spec.kind {
                IndicatorKind::Continuous => GroupStat::Continuous {
                    mean: g.iter().sum::<f64>() / g.len() as f64,
                    sd: mean_sd(g).ok().map(|(_, sd)| sd),
                },
                IndicatorKind::Binary => {
                    let count = g.iter().filter(|&&v| v == 1.0).count();
                    GroupStat::Binary { count, percent: 100.0 * count as f64 / g.len() as f64 }
                }
            };
            Ok(SummaryRow {
                name: spec.name.clone(),
                negative: stat(&neg),
                positive: stat(&pos),
                rho: pearson(&col, &y).ok(),
                p_value: ttest(&neg, &pos).ok().map(|t| t.p),
            })
        })
        .collect()
}

/// One entry of a correlation ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedIndicator {
    pub name: String,
    pub rho: f64,
    pub abs_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRanking {
    pub target: String,
    /// Sorted by `abs_rho` descending, ties by name ascending.
    pub entries: Vec<RankedIndicator>,
    /// Indicators left out because they are constant.
    pub skipped: Vec<String>,
}

impl CorrelationRanking {
    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

/// Name of the label column in rankings.
pub const LABEL_TARGET: &str = "label";

/// Rank indicators by absolute correlation with `target`, keeping the top
/// `top_k`. `target` is [`LABEL_TARGET`] or an indicator name (which is
/// then left out of the ranking).
pub fn rank_by_pearson(cohort: &Cohort, target: &str, top_k: usize) -> Result<CorrelationRanking> {
    let names = cohort.indicator_names();
    let y: Vec<f64> = if target == LABEL_TARGET {
        cohort.labels().iter().map(|&l| l as f64).collect()
    } else {
        cohort.column(target)?
    };
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate(format!("target {target} is constant")));
    }
    let candidates = names.iter().filter(|n| **n != target).count();
    if top_k > candidates {
        return Err(Error::Parameter(format!("top_k = {top_k} exceeds the {candidates} indicators")));
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for name in names.into_iter().filter(|n| *n != target) {
        match pearson(&cohort.column(name)?, &y) {
            Ok(rho) => entries.push(RankedIndicator { name: name.to_string(), rho, abs_rho: rho.abs() }),
            Err(Error::Degenerate(_)) => skipped.push(name.to_string()),
            Err(e) => return Err(e),
        }
    }
    entries.sort_by(|a, b| b.abs_rho.total_cmp(&a.abs_rho).then_with(|| a.name.cmp(&b.name)));
    entries.truncate(top_k);
    Ok(CorrelationRanking { target: target.to_string(), entries, skipped })
}
