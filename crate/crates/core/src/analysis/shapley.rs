use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest indicator count for exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 12;
/// Permutations evaluated per value-function batch in sampled mode.
const PERMUTATION_BATCH: usize = 32;

/// A set function over `p` features. Coalitions are bitmasks: bit `j` set
/// means feature `j` is present.
///
/// Implementations must be pure; batches exist so model-backed value
/// functions can score many coalitions in one forward pass.
pub trait ValueFunction: Sync {
    fn values(&self, coalitions: &[u64]) -> Result<Vec<f64>>;
}

impl<F: Fn(u64) -> f64 + Sync> ValueFunction for F {
    fn values(&self, coalitions: &[u64]) -> Result<Vec<f64>> {
        Ok(coalitions.iter().map(|&s| self(s)).collect())
    }
}

fn check_width(p: usize) -> Result<()> {
    if p == 0 || p > 63 {
        return Err(Error::Parameter(format!("feature count {p} outside 1..=63")));
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2^p` coalitions:
/// `phi_j = sum over S not containing j of |S|!(p-|S|-1)!/p! * (v(S+j) - v(S))`.
pub fn shapley_exact<V: ValueFunction + ?Sized>(value: &V, p: usize) -> Result<Vec<f64>> {
    check_width(p)?;
    if p > MAX_EXACT_FEATURES {
        return Err(Error::Parameter(format!(
            "exact Shapley is limited to {MAX_EXACT_FEATURES} features, got {p}; use permutation sampling"
        )));
    }
    let all: Vec<u64> = (0..1u64 << p).collect();
    let v = value.values(&all)?;
    if v.len() != all.len() {
        return Err(Error::Contract("value function returned the wrong number of values".into()));
    }
    // weight[s] = s! (p - s - 1)! / p!, built by a ratio recurrence
    let mut weight = vec![1.0 / p as f64; p];
    for s in 1..p {
        weight[s] = weight[s - 1] * s as f64 / (p - s) as f64;
    }
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1u64 << j;
        for s in all.iter().filter(|&&s| s & bit == 0) {
            let size = s.count_ones() as usize;
            *phi_j += weight[size] * (v[(s | bit) as usize] - v[*s as usize]);
        }
    }
    Ok(phi)
}

/// Monte Carlo Shapley estimate with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledShapley {
    pub phi: Vec<f64>,
    /// Standard error of each estimate; zero when `n_perm == 1`.
    pub stderr: Vec<f64>,
}

/// Random permutation number `r`. Each permutation owns its own ChaCha
/// stream, so any partition of the work reproduces the serial result.
pub fn permutation(p: usize, seed: u64, r: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    order
}

/// Average marginal contribution of each feature over `n_perm` uniformly
/// random orderings.
pub fn shapley_sampled<V: ValueFunction + ?Sized>(value: &V, p: usize, n_perm: usize, seed: u64) -> Result<SampledShapley> {
    check_width(p)?;
    if n_perm == 0 {
        return Err(Error::Parameter("n_perm must be at least 1".into()));
    }
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    let mut start = 0;
    while start < n_perm {
        let end = (start + PERMUTATION_BATCH).min(n_perm);
        let orders: Vec<Vec<usize>> = (start..end).map(|r| permutation(p, seed, r as u64)).collect();
        let mut coalitions = Vec::with_capacity(orders.len() * (p + 1));
        for order in &orders {
            let mut s = 0u64;
            coalitions.push(s);
            for &j in order {
                s |= 1 << j;
                coalitions.push(s);
            }
        }
        let v = value.values(&coalitions)?;
        if v.len() != coalitions.len() {
            return Err(Error::Contract("value function returned the wrong number of values".into()));
        }
        for (k, order) in orders.iter().enumerate() {
            let chain = &v[k * (p + 1)..(k + 1) * (p + 1)];
            for (pos, &j) in order.iter().enumerate() {
                let delta = chain[pos + 1] - chain[pos];
                sum[j] += delta;
                sum_sq[j] += delta * delta;
            }
        }
        start = end;
    }
    let n = n_perm as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = if n_perm == 1 {
        vec![0.0; p]
    } else {
        phi.iter().zip(&sum_sq).map(|(m, sq)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()).collect()
    };
    Ok(SampledShapley { phi, stderr })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ShapleyMode {
    Exact,
    Sampled { n_perm: usize, seed: u64 },
}

/// Shapley values of several samples over the same indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub indicators: Vec<String>,
    /// `phi[sample][indicator]`.
    pub phi: Vec<Vec<f64>>,
    /// Mean absolute Shapley value per indicator.
    pub global: Vec<f64>,
    pub value_function: String,
    pub mode: ShapleyMode,
}

impl ShapleyReport {
    pub fn new(indicators: Vec<String>, phi: Vec<Vec<f64>>, value_function: &str, mode: ShapleyMode) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Parameter("Shapley report needs at least one sample".into()));
        }
        if let Some(row) = phi.iter().find(|r| r.len() != indicators.len()) {
            return Err(Error::Dimension(format!("phi row has {} entries for {} indicators", row.len(), indicators.len())));
        }
        let n = phi.len() as f64;
        let global = (0..indicators.len()).map(|j| phi.iter().map(|r| r[j].abs()).sum::<f64>() / n).collect();
        Ok(ShapleyReport { indicators, phi, global, value_function: value_function.to_string(), mode })
    }
}

/// Indicators by mean `|phi|`, largest first, ties by name.
pub fn global_importance(report: &ShapleyReport) -> Vec<(String, f64)> {
    let mut ranking: Vec<(String, f64)> = report.indicators.iter().cloned().zip(report.global.iter().copied()).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranking
}
