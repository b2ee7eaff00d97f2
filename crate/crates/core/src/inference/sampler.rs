//! Adaptive random-walk Metropolis in unconstrained coordinates.
//!
//! Warmup follows a windowed schedule: an initial buffer tunes only the
//! global step scale, a sequence of doubling windows each re-estimates the
//! proposal covariance from the draws inside the window, and a terminal
//! buffer re-tunes the step scale against the final covariance. Everything is
//! frozen once warmup ends, so retained draws come from a fixed
//! Metropolis kernel.

use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::diagnostics::Diagnostics;
use super::InferenceError;
use crate::math::{exp, ln, sqrt};
use crate::rng::{self, tags, Rng};

/// An unnormalised log density on `R^dim`. Returns `-inf` outside the
/// support or when evaluation fails.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Log prior and log likelihood at `u`. Tempering scales only the
    /// likelihood.
    fn log_density_parts(&self, u: &[f64]) -> (f64, f64);

    fn log_density(&self, u: &[f64]) -> f64 {
        let (lp, ll) = self.log_density_parts(u);
        lp + ll
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Warmup iterations per chain.
    pub warmup: usize,
    /// Retained draws per chain.
    pub iterations: usize,
    /// Metropolis transitions per iteration; only the last state of each
    /// iteration is kept. Applies to warmup and sampling alike.
    pub thin: usize,
    pub seed: u64,
    /// Replicas per chain for parallel tempering; 1 disables tempering.
    pub temperatures: usize,
    /// Likelihood power of the hottest replica.
    pub min_inverse_temperature: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            iterations: 1000,
            thin: 10,
            seed: 0,
            temperatures: 6,
            min_inverse_temperature: 0.02,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::Config(m.into()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.iterations < 4 {
            return bad("iterations must be at least 4");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.warmup < 20 {
            return bad("warmup must be at least 20");
        }
        if self.temperatures == 0 {
            return bad("temperatures must be at least 1");
        }
        if !(self.min_inverse_temperature > 0.0 && self.min_inverse_temperature <= 1.0) {
            return bad("min_inverse_temperature must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.iterations
    }
}

/// Box from which initial states are drawn uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub acceptance_rate: f64,
    /// Fraction of accepted replica exchanges (zero without tempering).
    pub swap_rate: f64,
    pub step_scale: f64,
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub unconstrained: Vec<f64>,
    pub natural: Vec<f64>,
    pub log_density: f64,
}

/// Retained draws of all chains, in chain-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub coordinate_names: Vec<String>,
    pub parameter_names: Vec<String>,
    pub chains: usize,
    pub iterations: usize,
    pub draws: Vec<Draw>,
    pub diagnostics: Diagnostics,
    pub converged: bool,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Natural-space values of parameter `k` across all draws.
    pub fn natural_column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.natural[k]).collect()
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }
}

fn target_acceptance(dim: usize) -> f64 {
    if dim >= 5 {
        0.234
    } else {
        0.234 + (0.44 - 0.234) * (5 - dim) as f64 / 4.0
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix stored
/// row-major, or `None` if it is not numerically positive definite.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Streaming mean and covariance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self { n: 0, mean: alloc::vec![0.0; d], m2: alloc::vec![0.0; d * d] }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for k in 0..d {
            self.mean[k] += delta[k] / n;
        }
        for r in 0..d {
            let dr = x[r] - self.mean[r];
            for c in 0..d {
                self.m2[r * d + c] += delta[c] * dr;
            }
        }
    }

    /// Regularised covariance: shrinks slightly toward the diagonal for
    /// small windows.
    fn covariance(&self) -> Vec<f64> {
        let d = self.mean.len();
        let n = self.n as f64;
        let mut cov: Vec<f64> = self.m2.iter().map(|v| v / (n - 1.0)).collect();
        let w = n / (n + 5.0);
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    cov[r * d + c] *= w;
                }
            }
            cov[r * d + r] = cov[r * d + r] * (1.0 + 1e-6) + 1e-16;
        }
        cov
    }
}

/// Warmup window boundaries (in iterations) for covariance estimation.
fn adaptation_windows(warmup: usize) -> (usize, Vec<(usize, usize)>) {
    let init = warmup * 15 / 100;
    let term = warmup / 10;
    let end = warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = (warmup / 40).max(5);
    while start < end {
        let mut stop = start + size;
        if stop + 2 * size > end {
            stop = end;
        }
        windows.push((start, stop));
        start = stop;
        size *= 2;
    }
    (init, windows)
}

struct Proposal {
    chol: Vec<f64>,
    dim: usize,
    log_scale: f64,
}

impl Proposal {
    fn propose(&self, current: &[f64], rng: &mut Rng, out: &mut [f64], z: &mut [f64]) {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let s = exp(self.log_scale);
        let d = self.dim;
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..=r {
                acc += self.chol[r * d + c] * z[c];
            }
            out[r] = current[r] + s * acc;
        }
    }
}

struct Replica {
    x: Vec<f64>,
    log_prior: f64,
    log_lik: f64,
    inv_temp: f64,
    proposal: Proposal,
    welford: Welford,
    adapt_t: usize,
}

impl Replica {
    fn tempered(&self) -> f64 {
        self.log_prior + self.inv_temp * self.log_lik
    }
}

struct Scratch {
    candidate: Vec<f64>,
    z: Vec<f64>,
}

fn mh_step<T: LogDensity + ?Sized>(target: &T, r: &mut Replica, rng: &mut Rng, s: &mut Scratch) -> f64 {
    r.proposal.propose(&r.x, rng, &mut s.candidate, &mut s.z);
    let (lp, ll) = target.log_density_parts(&s.candidate);
    let proposed = lp + r.inv_temp * ll;
    let accept_prob = if !proposed.is_finite() {
        0.0
    } else {
        let log_ratio = proposed - r.tempered();
        if log_ratio >= 0.0 {
            1.0
        } else {
            exp(log_ratio)
        }
    };
    let u: f64 = rng.random();
    if u < accept_prob {
        r.x.copy_from_slice(&s.candidate);
        r.log_prior = lp;
        r.log_lik = ll;
    }
    accept_prob
}

/// Exchange moves between adjacent temperatures, alternating even and odd
/// pairs. Returns the number of accepted swaps.
fn swap_round(replicas: &mut [Replica], parity: usize, rng: &mut Rng) -> (usize, usize) {
    let (mut tried, mut accepted) = (0, 0);
    let mut k = parity;
    while k + 1 < replicas.len() {
        tried += 1;
        let log_ratio =
            (replicas[k].inv_temp - replicas[k + 1].inv_temp) * (replicas[k + 1].log_lik - replicas[k].log_lik);
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u < exp(log_ratio) {
            accepted += 1;
            let (lo, hi) = replicas.split_at_mut(k + 1);
            let (a, b) = (&mut lo[k], &mut hi[0]);
            core::mem::swap(&mut a.x, &mut b.x);
            core::mem::swap(&mut a.log_prior, &mut b.log_prior);
            core::mem::swap(&mut a.log_lik, &mut b.log_lik);
        }
        k += 2;
    }
    (tried, accepted)
}

/// Runs one chain. The chain's random stream depends only on
/// `(config.seed, chain)`.
///
/// With `config.temperatures > 1` the chain carries a ladder of replicas
/// whose likelihood is raised to geometrically spaced powers down to
/// `config.min_inverse_temperature`; only the untempered replica is
/// recorded.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &InitSpec,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, InferenceError> {
    config.validate()?;
    let d = target.dim();
    let mut rng = rng::rng_from_seed(rng::derive_seed(config.seed, tags::CHAIN, chain as u64));
    let n_temps = config.temperatures;
    let base_log_scale = ln(2.38 / sqrt(d as f64));
    let target_acc = target_acceptance(d);

    const ATTEMPTS: usize = 100;
    let mut replicas = Vec::with_capacity(n_temps);
    for k in 0..n_temps {
        let inv_temp = if n_temps == 1 {
            1.0
        } else {
            libm::pow(config.min_inverse_temperature, k as f64 / (n_temps - 1) as f64)
        };
        let mut x = alloc::vec![0.0; d];
        let mut parts = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for _ in 0..ATTEMPTS {
            for (xk, (c, r)) in x.iter_mut().zip(init.center.iter().zip(&init.radius)) {
                let u: f64 = rng.random_range(-1.0..1.0);
                *xk = c + r * u;
            }
            parts = target.log_density_parts(&x);
            if (parts.0 + parts.1).is_finite() {
                break;
            }
        }
        if !(parts.0 + parts.1).is_finite() {
            return Err(InferenceError::Initialization { chain, attempts: ATTEMPTS });
        }
        let mut chol = alloc::vec![0.0; d * d];
        for (k, r) in init.radius.iter().enumerate() {
            chol[k * d + k] = r.max(1e-8) * 0.25;
        }
        replicas.push(Replica {
            x,
            log_prior: parts.0,
            log_lik: parts.1,
            inv_temp,
            proposal: Proposal { chol, dim: d, log_scale: base_log_scale },
            welford: Welford::new(d),
            adapt_t: 0,
        });
    }
    let mut scratch = Scratch { candidate: alloc::vec![0.0; d], z: alloc::vec![0.0; d] };

    let (init_buffer, windows) = adaptation_windows(config.warmup);
    let mut window_idx = 0;
    let mut parity = 0;
    for it in 0..config.warmup {
        if window_idx < windows.len() && it == windows[window_idx].1 {
            for r in replicas.iter_mut() {
                if r.welford.n > d + 2 {
                    if let Some(l) = cholesky(&r.welford.covariance(), d) {
                        r.proposal.chol = l;
                        r.proposal.log_scale = base_log_scale;
                        r.adapt_t = 0;
                    }
                }
                r.welford = Welford::new(d);
            }
            window_idx += 1;
        }
        let in_window = it >= init_buffer && window_idx < windows.len() && it >= windows[window_idx].0;
        for r in replicas.iter_mut() {
            for _ in 0..config.thin {
                let acc = mh_step(target, r, &mut rng, &mut scratch);
                r.adapt_t += 1;
                let gain = 1.0 / libm::pow(r.adapt_t as f64 + 10.0, 0.6);
                r.proposal.log_scale = (r.proposal.log_scale + gain * 2.0 * (acc - target_acc)).clamp(-30.0, 5.0);
                if in_window {
                    r.welford.push(&r.x);
                }
            }
        }
        swap_round(&mut replicas, parity, &mut rng);
        parity ^= 1;
    }

    let mut draws = Vec::with_capacity(config.iterations);
    let mut lps = Vec::with_capacity(config.iterations);
    let mut acc_sum = 0.0;
    let (mut swaps_tried, mut swaps_accepted) = (0, 0);
    for _ in 0..config.iterations {
        for (k, r) in replicas.iter_mut().enumerate() {
            for _ in 0..config.thin {
                let acc = mh_step(target, r, &mut rng, &mut scratch);
                if k == 0 {
                    acc_sum += acc;
                }
            }
        }
        let (t, a) = swap_round(&mut replicas, parity, &mut rng);
        swaps_tried += t;
        swaps_accepted += a;
        parity ^= 1;
        draws.push(replicas[0].x.clone());
        lps.push(replicas[0].log_prior + replicas[0].log_lik);
    }
    Ok(ChainOutput {
        chain,
        draws,
        log_density: lps,
        acceptance_rate: acc_sum / (config.iterations * config.thin) as f64,
        swap_rate: if swaps_tried == 0 { 0.0 } else { swaps_accepted as f64 / swaps_tried as f64 },
        step_scale: exp(replicas[0].proposal.log_scale),
    })
}

/// Combines chain outputs into [`PosteriorDraws`] and computes diagnostics on
/// the unconstrained coordinates. `natural` maps a coordinate vector to
/// natural-space parameter values.
pub fn assemble_draws<F>(
    config: &SamplerConfig,
    mut chains: Vec<ChainOutput>,
    coordinate_names: Vec<String>,
    parameter_names: Vec<String>,
    natural: F,
) -> PosteriorDraws
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    chains.sort_by_key(|c| c.chain);
    let diagnostics = Diagnostics::compute(&chains, &coordinate_names);
    let converged = diagnostics.converged();
    let mut draws = Vec::with_capacity(config.total_draws());
    for c in &chains {
        for (it, (u, lp)) in c.draws.iter().zip(&c.log_density).enumerate() {
            draws.push(Draw {
                chain: c.chain,
                iteration: it,
                natural: natural(u),
                unconstrained: u.clone(),
                log_density: *lp,
            });
        }
    }
    PosteriorDraws {
        coordinate_names,
        parameter_names,
        chains: chains.len(),
        iterations: config.iterations,
        draws,
        diagnostics,
        converged,
    }
}

/// Runs every chain sequentially and assembles the result with identity
/// naming.
pub fn sample<T: LogDensity + ?Sized>(
    target: &T,
    init: &InitSpec,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, InferenceError> {
    let chains = (0..config.chains)
        .map(|c| run_chain(target, init, config, c))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = (0..target.dim()).map(|k| alloc::format!("x[{}]", k + 1)).collect();
    Ok(assemble_draws(config, chains, names.clone(), names, |u| u.to_vec()))
}
