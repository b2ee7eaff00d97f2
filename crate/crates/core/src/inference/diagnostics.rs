//! Split R-hat and effective sample size over multiple chains.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::sampler::ChainOutput;
use crate::math::sqrt;

pub const MAX_RHAT: f64 = 1.05;
pub const MIN_ESS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Names of the unconstrained coordinates the statistics refer to.
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
}

impl Diagnostics {
    pub fn compute(chains: &[ChainOutput], names: &[String]) -> Self {
        let dim = names.len();
        let mut rhat = Vec::with_capacity(dim);
        let mut ess = Vec::with_capacity(dim);
        for k in 0..dim {
            let columns: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[k]).collect()).collect();
            rhat.push(split_rhat(&columns));
            ess.push(effective_sample_size(&columns));
        }
        let max_rhat = rhat.iter().copied().fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
        let min_ess = ess.iter().copied().fold(f64::INFINITY, |a, b| if b.is_nan() { 0.0 } else { a.min(b) });
        Self {
            names: names.to_vec(),
            rhat,
            ess,
            acceptance_rate: chains.iter().map(|c| c.acceptance_rate).collect(),
            max_rhat,
            min_ess,
        }
    }

    pub fn converged(&self) -> bool {
        self.max_rhat <= MAX_RHAT && self.min_ess >= MIN_ESS
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Potential scale reduction on chains split in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = n * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    sqrt(var_plus / w)
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let n = xs.len();
    (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// estimator, computed on split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 4 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let m = parts.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / m;
    let var_plus = (n - 1.0) / n * w + if parts.len() > 1 { variance(&means) } else { 0.0 };
    if !(var_plus > 0.0) {
        return if w == 0.0 { m * n } else { f64::NAN };
    }
    let rho = |lag: usize| -> f64 {
        let acov = parts.iter().map(|p| autocovariance(p, lag)).sum::<f64>() / m;
        1.0 - (w - acov) / var_plus
    };
    // rho(0) is 1 up to the (n - 1)/n factor; use the exact expression.
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < half {
        let r0 = if t == 0 { 1.0 } else { rho(t) };
        let pair = r0 + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let tau = tau.max(1.0 / libm::log10(m * n).max(1.0));
    m * n / tau
}
