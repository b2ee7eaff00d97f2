//! Marginal likelihood, posterior sampling, convergence diagnostics and
//! latent-state decoding.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math::ln;
use crate::model::{ModelError, ParamLayout, PriorConfig, Variant};
use crate::triangle::Triangle;

pub mod diagnostics;
mod forward;
pub mod sampler;
mod viterbi;

pub use diagnostics::{effective_sample_size, split_rhat, Diagnostics};
pub use forward::{forward_log_likelihood, FilterKernel, ForwardResult, RowForward};
pub use sampler::{
    assemble_draws, run_chain, ChainOutput, Draw, InitSpec, LogDensity, PosteriorDraws,
    SamplerConfig,
};
pub use viterbi::{viterbi, viterbi_row, StatePath};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("non-finite likelihood at cell ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
}

/// Log losses of each training row, prepared once per fit.
#[derive(Debug, Clone)]
pub struct LogRows {
    pub rows: Vec<Vec<f64>>,
}

impl LogRows {
    pub fn new(t: &Triangle) -> Self {
        Self { rows: t.rows().iter().map(|r| r.iter().map(|&y| ln(y)).collect()).collect() }
    }
}

/// Unnormalised log posterior of the hidden Markov model in unconstrained
/// coordinates.
#[derive(Debug, Clone)]
pub struct HmmPosterior {
    pub layout: ParamLayout,
    pub priors: PriorConfig,
    data: LogRows,
    horizon: usize,
    likelihood: bool,
}

impl HmmPosterior {
    pub fn new(train: &Triangle, variant: Variant, priors: &PriorConfig) -> Self {
        let horizon = train.n_development().max(train.rows().iter().map(Vec::len).max().unwrap_or(0));
        Self {
            layout: ParamLayout::new(variant, train.n_development()),
            priors: priors.clone(),
            data: LogRows::new(train),
            horizon,
            likelihood: true,
        }
    }

    /// Drops the likelihood so the target is the prior alone.
    pub fn prior_only(mut self) -> Self {
        self.likelihood = false;
        self
    }

    pub fn log_likelihood(&self, u: &[f64]) -> f64 {
        let theta = self.layout.constrain(u);
        let kernel = FilterKernel::new(&theta, self.layout.variant, self.horizon);
        self.data.rows.iter().map(|r| kernel.row_log_likelihood(r)).sum()
    }
}

impl LogDensity for HmmPosterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_parts(&self, u: &[f64]) -> (f64, f64) {
        let lp = self.layout.log_prior(u, &self.priors);
        if !lp.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        if !self.likelihood {
            return (lp, 0.0);
        }
        let ll = self.log_likelihood(u);
        if ll.is_finite() {
            (lp, ll)
        } else {
            (lp, f64::NEG_INFINITY)
        }
    }
}

/// Forward log-likelihood of the constrained parameters plus the log prior of
/// `u`.
pub fn log_posterior(
    u: &[f64],
    train: &Triangle,
    variant: Variant,
    priors: &PriorConfig,
) -> Result<f64, InferenceError> {
    let layout = ParamLayout::new(variant, train.n_development());
    if u.len() != layout.dim() {
        return Err(ModelError::Dimension { expected: layout.dim(), got: u.len() }.into());
    }
    let ll = forward_log_likelihood(train, &layout.constrain(u), variant)?;
    Ok(ll.total_log_likelihood + layout.log_prior(u, priors))
}

/// Fits the hidden Markov model. Chains run one after another; see
/// [`run_chain`] and [`assemble_draws`] to schedule them differently.
pub fn sample_posterior(
    train: &Triangle,
    variant: Variant,
    priors: &PriorConfig,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, InferenceError> {
    priors.validate()?;
    config.validate()?;
    let target = HmmPosterior::new(train, variant, priors);
    let init = hmm_init(&target.layout, priors);
    let chains = (0..config.chains)
        .map(|c| run_chain(&target, &init, config, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(hmm_draws(&target.layout, config, chains))
}

/// Initial-point region for the hidden Markov model: prior centre with a
/// spread of up to two prior scales.
pub fn hmm_init(layout: &ParamLayout, priors: &PriorConfig) -> InitSpec {
    let (center, scale) = layout.prior_center_and_scale(priors);
    let radius = scale.iter().map(|s| (2.0 * s).min(2.0)).collect();
    InitSpec { center, radius }
}

pub fn hmm_draws(layout: &ParamLayout, config: &SamplerConfig, chains: Vec<ChainOutput>) -> PosteriorDraws {
    let layout = *layout;
    assemble_draws(
        config,
        chains,
        layout.unconstrained_names(),
        layout.natural_names(),
        |u| layout.natural_values(&layout.constrain(u)),
    )
}
