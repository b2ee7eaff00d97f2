//! Two-step baseline: a deterministic switch from chain-ladder body to Bondy
//! tail at a fixed development period `tau`.
//!
//! The body sub-model fits lognormal link ratios on observed transitions into
//! periods `2..=tau`; the tail sub-model fits the Bondy factor, with its own
//! variance parameters, on transitions into periods `rho.0 < j <= rho.1`.
//! Priors match the hidden Markov model. The two sub-models share no
//! parameters, so a joint fit samples their independent posteriors at once.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::inference::{
    assemble_draws, run_chain, FilterKernel, InferenceError, InitSpec, LogDensity, LogRows,
    PosteriorDraws, SamplerConfig,
};
use crate::math::{self, exp, ln, logistic};
use crate::model::{EmissionParams, EmissionTable, ModelError, PriorConfig, State};
use crate::triangle::Triangle;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TwoStepError {
    #[error("tau must lie in 2..={m}, got {tau}")]
    Tau { tau: usize, m: usize },
    #[error("rho must satisfy 2 <= rho1 <= rho2 <= {m}, got ({lo}, {hi})")]
    Rho { lo: usize, hi: usize, m: usize },
    #[error("no observed body transitions into periods 2..={tau}")]
    EmptyBody { tau: usize },
    #[error("no observed tail transitions into periods {lo} < j <= {hi}")]
    EmptyTail { lo: usize, hi: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl From<ModelError> for TwoStepError {
    fn from(e: ModelError) -> Self {
        TwoStepError::Inference(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepConfig {
    /// Last development period modelled by the body.
    pub tau: usize,
    /// Tail fitting window `(rho1, rho2]`.
    pub rho: (usize, usize),
}

impl TwoStepConfig {
    pub fn validate(&self, m: usize) -> Result<(), TwoStepError> {
        if self.tau < 2 || self.tau > m {
            return Err(TwoStepError::Tau { tau: self.tau, m });
        }
        let (lo, hi) = self.rho;
        if lo < 2 || lo > hi || hi > m {
            return Err(TwoStepError::Rho { lo, hi, m });
        }
        Ok(())
    }

    pub fn is_body(&self, j: usize) -> bool {
        j <= self.tau
    }

    pub fn in_tail_window(&self, j: usize) -> bool {
        j > self.rho.0 && j <= self.rho.1
    }
}

/// Parameters of one two-step draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepParams {
    /// Body link ratios for transitions `1..=tau-1`.
    pub alpha: Vec<f64>,
    pub omega: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub tail_gamma1: f64,
    pub tail_gamma2: f64,
}

/// Unconstrained layout: `ln alpha[1..tau-1]`, `ln ln omega`, `logit beta`,
/// body `gamma1`, `gamma2`, tail `gamma1`, `gamma2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoStepLayout {
    pub config: TwoStepConfig,
    pub n_development: usize,
}

impl TwoStepLayout {
    pub fn new(config: TwoStepConfig, n_development: usize) -> Self {
        Self { config, n_development }
    }

    pub fn n_alpha(&self) -> usize {
        self.config.tau - 1
    }

    pub fn dim(&self) -> usize {
        self.n_alpha() + 6
    }

    pub fn unconstrained_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_alpha()).map(|j| format!("log_alpha[{j}]")).collect();
        names.extend(["loglog_omega", "logit_beta", "gamma1", "gamma2", "tail_gamma1", "tail_gamma2"].map(String::from));
        names
    }

    pub fn natural_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_alpha()).map(|j| format!("alpha[{j}]")).collect();
        names.extend(["omega", "beta", "gamma1", "gamma2", "tail_gamma1", "tail_gamma2"].map(String::from));
        names
    }

    pub fn constrain(&self, u: &[f64]) -> TwoStepParams {
        let na = self.n_alpha();
        TwoStepParams {
            alpha: u[..na].iter().map(|&x| exp(x)).collect(),
            omega: exp(exp(u[na])),
            beta: logistic(u[na + 1]),
            gamma1: u[na + 2],
            gamma2: u[na + 3],
            tail_gamma1: u[na + 4],
            tail_gamma2: u[na + 5],
        }
    }

    pub fn natural_values(&self, p: &TwoStepParams) -> Vec<f64> {
        let mut v = p.alpha.clone();
        v.extend([p.omega, p.beta, p.gamma1, p.gamma2, p.tail_gamma1, p.tail_gamma2]);
        v
    }

    /// Log prior in unconstrained coordinates; tail variance parameters share
    /// the body's prior.
    pub fn log_prior(&self, u: &[f64], priors: &PriorConfig) -> f64 {
        let na = self.n_alpha();
        let mut lp = 0.0;
        for (k, &x) in u[..na].iter().enumerate() {
            lp += math::normal_logpdf(x, 0.0, priors.alpha_scale_rule.scale(k + 1));
        }
        let c = u[na];
        lp += math::half_normal_logpdf(exp(c), priors.omega_scale) + c;
        lp += math::normal_logpdf(u[na + 1], priors.beta_logit_loc, priors.beta_logit_scale);
        for g in [na + 2, na + 4] {
            lp += math::normal_logpdf(u[g], priors.gamma1_loc, priors.gamma1_scale);
            lp += math::normal_logpdf(u[g + 1], priors.gamma2_loc, priors.gamma2_scale);
        }
        lp
    }

    pub fn table(&self, p: &TwoStepParams, horizon: usize) -> EmissionTable {
        let phi = EmissionParams {
            alpha: p.alpha.clone(),
            omega: p.omega,
            beta: p.beta,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
        };
        EmissionTable::with_regime_variances(&phi, (p.tail_gamma1, p.tail_gamma2), horizon)
    }

    /// Filter kernel with the regime fixed by `tau`.
    pub fn kernel(&self, u: &[f64], horizon: usize) -> FilterKernel {
        FilterKernel::fixed_regime(self.table(&self.constrain(u), horizon), self.config.tau)
    }

    fn init(&self, priors: &PriorConfig) -> InitSpec {
        let na = self.n_alpha();
        let mut center = alloc::vec![0.0; na];
        let mut radius: Vec<f64> = (1..=na).map(|j| (2.0 * priors.alpha_scale_rule.scale(j)).min(2.0)).collect();
        center.extend([
            ln(0.674_489_75 * priors.omega_scale),
            priors.beta_logit_loc,
            priors.gamma1_loc,
            priors.gamma2_loc,
            priors.gamma1_loc,
            priors.gamma2_loc,
        ]);
        let r = |s: f64| (2.0 * s).min(2.0);
        radius.extend([
            2.0,
            r(priors.beta_logit_scale),
            r(priors.gamma1_scale),
            r(priors.gamma2_scale),
            r(priors.gamma1_scale),
            r(priors.gamma2_scale),
        ]);
        InitSpec { center, radius }
    }
}

/// Joint posterior of the body and tail sub-models.
#[derive(Debug, Clone)]
pub struct TwoStepPosterior {
    pub layout: TwoStepLayout,
    pub priors: PriorConfig,
    data: LogRows,
    horizon: usize,
}

impl TwoStepPosterior {
    pub fn new(train: &Triangle, config: TwoStepConfig, priors: &PriorConfig) -> Result<Self, TwoStepError> {
        let m = train.n_development();
        config.validate(m)?;
        priors.validate()?;
        let horizon = m.max(train.rows().iter().map(Vec::len).max().unwrap_or(0));
        let n_body = transitions(train, |j| config.is_body(j));
        if n_body == 0 {
            return Err(TwoStepError::EmptyBody { tau: config.tau });
        }
        let n_tail = transitions(train, |j| config.in_tail_window(j));
        if n_tail == 0 && config.tau < m {
            return Err(TwoStepError::EmptyTail { lo: config.rho.0, hi: config.rho.1 });
        }
        Ok(Self { layout: TwoStepLayout::new(config, m), priors: priors.clone(), data: LogRows::new(train), horizon })
    }

    /// Body and tail log likelihoods.
    pub fn log_likelihood_parts(&self, u: &[f64]) -> (f64, f64) {
        let table = self.layout.table(&self.layout.constrain(u), self.horizon);
        let cfg = self.layout.config;
        let (mut body, mut tail) = (0.0, 0.0);
        for row in &self.data.rows {
            for j in 2..=row.len() {
                if cfg.is_body(j) {
                    body += table.log_density(State::Body, j, row[j - 1], row[j - 2]);
                }
                if cfg.in_tail_window(j) {
                    tail += table.log_density(State::Tail, j, row[j - 1], row[j - 2]);
                }
            }
        }
        (body, tail)
    }
}

fn transitions(train: &Triangle, keep: impl Fn(usize) -> bool) -> usize {
    train.rows().iter().map(|r| (2..=r.len()).filter(|&j| keep(j)).count()).sum()
}

impl LogDensity for TwoStepPosterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_parts(&self, u: &[f64]) -> (f64, f64) {
        let lp = self.layout.log_prior(u, &self.priors);
        if !lp.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        let (b, t) = self.log_likelihood_parts(u);
        let ll = b + t;
        (lp, if ll.is_finite() { ll } else { f64::NEG_INFINITY })
    }
}

/// Fits the two-step baseline with the same sampler as the hidden Markov
/// model.
pub fn fit_two_step(
    train: &Triangle,
    config: TwoStepConfig,
    priors: &PriorConfig,
    sampler: &SamplerConfig,
) -> Result<PosteriorDraws, TwoStepError> {
    sampler.validate()?;
    let target = TwoStepPosterior::new(train, config, priors)?;
    let init = target.layout.init(priors);
    let chains = (0..sampler.chains)
        .map(|c| run_chain(&target, &init, sampler, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(two_step_draws(&target.layout, sampler, chains))
}

pub fn two_step_draws(
    layout: &TwoStepLayout,
    config: &SamplerConfig,
    chains: Vec<crate::inference::ChainOutput>,
) -> PosteriorDraws {
    let layout = *layout;
    assemble_draws(config, chains, layout.unconstrained_names(), layout.natural_names(), |u| {
        layout.natural_values(&layout.constrain(u))
    })
}

/// Initial-point region of the two-step posterior.
pub fn two_step_init(layout: &TwoStepLayout, priors: &PriorConfig) -> InitSpec {
    layout.init(priors)
}

/// Posterior-predictive simulation under the fixed switch point.
pub fn predict_two_step(
    draws: &PosteriorDraws,
    train: &Triangle,
    config: TwoStepConfig,
    horizon: usize,
    cap_base: f64,
    seed: u64,
) -> Result<crate::predict::PredictionSet, crate::predict::PredictError> {
    crate::predict::simulate_predictions(
        crate::predict::ModelSpec::TwoStep { config },
        draws,
        train,
        horizon,
        cap_base,
        seed,
    )
}
