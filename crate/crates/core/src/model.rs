//! Parameter spaces, priors and densities of the hidden Markov development
//! model.
//!
//! Emissions are lognormal. For development period `j >= 2`, conditional on
//! the previous cumulative loss `y_prev`:
//!
//! - body: log-location `ln(alpha[j-1] * y_prev)`
//! - tail: log-location `ln(omega^(beta^j) * y_prev)`
//! - both: variance `sigma^2 = y_prev * exp(gamma1 + gamma2 * j)`
//!
//! The latent chain starts in the body at `j = 1`; the first loss of each
//! row is not modelled.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{self, exp, ln, logistic, logit, LN_SQRT_2PI};
use crate::rng::{self, Rng};
use crate::triangle::{Triangle, TriangleError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("variance exponent out of range at development period {j}: {exponent}")]
    NumericalRange { j: usize, exponent: f64 },
    #[error("non-finite emission log-density at development period {j}")]
    NonFinite { j: usize },
    #[error("invalid prior configuration: {0}")]
    InvalidPrior(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter {name} = {value} violates its constraint")]
    Constraint { name: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("simulated loss overflowed at cell ({i}, {j})")]
    Overflow { i: usize, j: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Body = 0,
    Tail = 1,
}

impl State {
    pub const ALL: [State; 2] = [State::Body, State::Tail];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> State {
        if k == 0 {
            State::Body
        } else {
            State::Tail
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            State::Body => "body",
            State::Tail => "tail",
        }
    }
}

/// Transition structure of the latent chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Absorbing tail, constant body-stay probability.
    Hmm,
    /// Tail may return to the body with probability `nu`.
    HmmNu,
    /// Absorbing tail, body-stay probability non-increasing in the
    /// development period.
    HmmLag,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Hmm => "hmm",
            Variant::HmmNu => "hmm-nu",
            Variant::HmmLag => "hmm-lag",
        }
    }

    pub fn tail_absorbing(self) -> bool {
        !matches!(self, Variant::HmmNu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    /// Body link ratios for transitions `1..=M-1`.
    pub alpha: Vec<f64>,
    pub omega: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// Body-stay probability: one value, or one per transition for
    /// [`Variant::HmmLag`].
    pub pi: Vec<f64>,
    /// Tail-to-body probability; zero for the absorbing variants.
    pub nu: f64,
}

impl TransitionParams {
    /// Body-stay probability for transition `d` (1-based). Transitions past
    /// the last stored value reuse it.
    pub fn pi_at(&self, d: usize) -> f64 {
        let k = d.saturating_sub(1).min(self.pi.len() - 1);
        self.pi[k]
    }
}

/// One joint realisation of emission and transition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub emission: EmissionParams,
    pub transition: TransitionParams,
}

/// How the prior scale of `ln alpha[j]` depends on `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaScaleRule {
    /// Scale `1 / j`.
    InversePeriod,
    /// The same scale for every transition.
    Constant(f64),
}

impl AlphaScaleRule {
    pub fn scale(self, j: usize) -> f64 {
        match self {
            AlphaScaleRule::InversePeriod => 1.0 / j as f64,
            AlphaScaleRule::Constant(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub alpha_scale_rule: AlphaScaleRule,
    /// Half-normal scale of `ln omega`.
    pub omega_scale: f64,
    pub beta_logit_loc: f64,
    pub beta_logit_scale: f64,
    pub gamma1_loc: f64,
    pub gamma1_scale: f64,
    pub gamma2_loc: f64,
    pub gamma2_scale: f64,
    pub pi_logit_loc: f64,
    pub pi_logit_scale: f64,
    pub nu_logit_loc: f64,
    pub nu_logit_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha_scale_rule: AlphaScaleRule::InversePeriod,
            omega_scale: 1.0,
            beta_logit_loc: 0.0,
            beta_logit_scale: 1.0,
            gamma1_loc: 0.0,
            gamma1_scale: 1.0,
            gamma2_loc: 0.0,
            gamma2_scale: 1.0,
            pi_logit_loc: 0.0,
            pi_logit_scale: 1.0,
            nu_logit_loc: 0.0,
            nu_logit_scale: 1.0,
        }
    }
}

impl PriorConfig {
    /// Defaults with the tighter variance priors used for calibration runs:
    /// `gamma1 ~ Normal(-3, 0.25)`, `gamma2 ~ Normal(-1, 0.1)`.
    pub fn calibration() -> Self {
        Self {
            gamma1_loc: -3.0,
            gamma1_scale: 0.25,
            gamma2_loc: -1.0,
            gamma2_scale: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let scales = [
            ("omega_scale", self.omega_scale),
            ("beta_logit_scale", self.beta_logit_scale),
            ("gamma1_scale", self.gamma1_scale),
            ("gamma2_scale", self.gamma2_scale),
            ("pi_logit_scale", self.pi_logit_scale),
            ("nu_logit_scale", self.nu_logit_scale),
        ];
        for (name, s) in scales {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ModelError::InvalidPrior(format!("{name} must be positive, got {s}")));
            }
        }
        if let AlphaScaleRule::Constant(s) = self.alpha_scale_rule {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ModelError::InvalidPrior(format!("alpha scale must be positive, got {s}")));
            }
        }
        let locs = [
            self.beta_logit_loc,
            self.gamma1_loc,
            self.gamma2_loc,
            self.pi_logit_loc,
            self.nu_logit_loc,
        ];
        if locs.iter().any(|l| !l.is_finite()) {
            return Err(ModelError::InvalidPrior("locations must be finite".into()));
        }
        Ok(())
    }
}

/// Emission scale `sqrt(y_prev * exp(gamma1 + gamma2 * j))`.
pub fn sigma(gamma1: f64, gamma2: f64, j: usize, y_prev: f64) -> Result<f64, ModelError> {
    let exponent = gamma1 + gamma2 * j as f64 + ln(y_prev);
    let var = exp(exponent);
    if !(var.is_finite() && var > 0.0) {
        return Err(ModelError::NumericalRange { j, exponent });
    }
    Ok(math::sqrt(var))
}

/// Tail link ratio `omega^(beta^j)`.
pub fn tail_factor(omega: f64, beta: f64, j: usize) -> f64 {
    math::powf(omega, math::powf(beta, j as f64))
}

/// Lognormal emission log-density of `y` at development period `j >= 2`.
pub fn emission_log_density(
    y: f64,
    y_prev: f64,
    state: State,
    phi: &EmissionParams,
    j: usize,
) -> Result<f64, ModelError> {
    let s = sigma(phi.gamma1, phi.gamma2, j, y_prev)?;
    let mu = match state {
        State::Body => ln(alpha_at(&phi.alpha, j - 1) * y_prev),
        State::Tail => ln(tail_factor(phi.omega, phi.beta, j) * y_prev),
    };
    let lp = math::lognormal_logpdf(y, mu, s);
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(ModelError::NonFinite { j })
    }
}

/// Body link ratio for transition `d`; transitions past `M - 1` reuse the
/// last ratio.
pub(crate) fn alpha_at(alpha: &[f64], d: usize) -> f64 {
    alpha[d.saturating_sub(1).min(alpha.len() - 1)]
}

/// Row-stochastic 2x2 transition matrix for transition `d` (into period
/// `d + 1`). Row and column 0 are the body.
pub fn transition_matrix(variant: Variant, psi: &TransitionParams, d: usize) -> [[f64; 2]; 2] {
    let pi = match variant {
        Variant::HmmLag => psi.pi_at(d),
        Variant::Hmm | Variant::HmmNu => psi.pi[0],
    };
    let nu = match variant {
        Variant::HmmNu => psi.nu,
        Variant::Hmm | Variant::HmmLag => 0.0,
    };
    [[pi, 1.0 - pi], [nu, 1.0 - nu]]
}

/// Precomputed per-period emission quantities, indexed by state and `j`.
///
/// The drift is the log link ratio and the variance offset is
/// `ln(sigma^2) - ln(y_prev)`. Entries for `j < 2` are unused.
#[derive(Debug, Clone)]
pub struct EmissionTable {
    drift: [Vec<f64>; 2],
    log_var_offset: [Vec<f64>; 2],
}

impl EmissionTable {
    pub fn new(phi: &EmissionParams, horizon: usize) -> Self {
        let mut body = alloc::vec![0.0; horizon + 1];
        let mut tail = alloc::vec![0.0; horizon + 1];
        let mut var = alloc::vec![0.0; horizon + 1];
        let ln_omega = ln(phi.omega);
        let mut beta_pow = phi.beta;
        for j in 1..=horizon {
            if j >= 2 {
                body[j] = ln(alpha_at(&phi.alpha, j - 1));
                tail[j] = beta_pow * ln_omega;
                var[j] = phi.gamma1 + phi.gamma2 * j as f64;
            }
            beta_pow *= phi.beta;
        }
        Self { drift: [body, tail], log_var_offset: [var.clone(), var] }
    }

    /// Table with per-regime variance parameters, used by the two-step
    /// baseline.
    pub fn with_regime_variances(
        phi: &EmissionParams,
        tail_gamma: (f64, f64),
        horizon: usize,
    ) -> Self {
        let mut t = Self::new(phi, horizon);
        for j in 2..=horizon {
            t.log_var_offset[1][j] = tail_gamma.0 + tail_gamma.1 * j as f64;
        }
        t
    }

    pub fn horizon(&self) -> usize {
        self.drift[0].len() - 1
    }

    #[inline]
    pub fn log_density(&self, state: State, j: usize, ln_y: f64, ln_y_prev: f64) -> f64 {
        let s = state.index();
        let log_var = self.log_var_offset[s][j] + ln_y_prev;
        let resid = ln_y - ln_y_prev - self.drift[s][j];
        -ln_y - 0.5 * log_var - LN_SQRT_2PI - 0.5 * resid * resid * exp(-log_var)
    }

    /// Draws `y` given `y_prev` using a standard normal deviate `z`.
    #[inline]
    pub fn sample(&self, state: State, j: usize, y_prev: f64, z: f64) -> f64 {
        let s = state.index();
        let ln_prev = ln(y_prev);
        let log_var = self.log_var_offset[s][j] + ln_prev;
        exp(ln_prev + self.drift[s][j] + exp(0.5 * log_var) * z)
    }

    #[inline]
    pub fn drift(&self, state: State, j: usize) -> f64 {
        self.drift[state.index()][j]
    }
}

/// Coordinates of the unconstrained parameter vector for one variant.
///
/// Layout: `ln alpha[1..M-1]`, `ln ln omega`, `logit beta`, `gamma1`,
/// `gamma2`, then the transition block (`logit pi`; or `logit pi_1` followed
/// by log-gaps for [`Variant::HmmLag`]; plus `logit nu` for
/// [`Variant::HmmNu`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub variant: Variant,
    pub n_development: usize,
}

impl ParamLayout {
    pub fn new(variant: Variant, n_development: usize) -> Self {
        assert!(n_development >= 2, "need at least two development periods");
        Self { variant, n_development }
    }

    pub fn n_alpha(&self) -> usize {
        self.n_development - 1
    }

    fn n_pi(&self) -> usize {
        match self.variant {
            Variant::HmmLag => self.n_alpha(),
            _ => 1,
        }
    }

    fn pi_offset(&self) -> usize {
        self.n_alpha() + 4
    }

    pub fn dim(&self) -> usize {
        self.pi_offset() + self.n_pi() + usize::from(self.variant == Variant::HmmNu)
    }

    pub fn unconstrained_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_alpha()).map(|j| format!("log_alpha[{j}]")).collect();
        names.extend(["loglog_omega", "logit_beta", "gamma1", "gamma2"].map(String::from));
        match self.variant {
            Variant::HmmLag => {
                names.push("logit_pi[1]".into());
                names.extend((2..=self.n_alpha()).map(|d| format!("log_gap_pi[{d}]")));
            }
            _ => names.push("logit_pi".into()),
        }
        if self.variant == Variant::HmmNu {
            names.push("logit_nu".into());
        }
        names
    }

    pub fn natural_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_alpha()).map(|j| format!("alpha[{j}]")).collect();
        names.extend(["omega", "beta", "gamma1", "gamma2"].map(String::from));
        match self.variant {
            Variant::HmmLag => names.extend((1..=self.n_alpha()).map(|d| format!("pi[{d}]"))),
            _ => names.push("pi".into()),
        }
        if self.variant == Variant::HmmNu {
            names.push("nu".into());
        }
        names
    }

    pub fn natural_values(&self, theta: &ParameterDraw) -> Vec<f64> {
        let e = &theta.emission;
        let mut v = e.alpha.clone();
        v.extend([e.omega, e.beta, e.gamma1, e.gamma2]);
        v.extend(theta.transition.pi.iter().copied());
        if self.variant == Variant::HmmNu {
            v.push(theta.transition.nu);
        }
        v
    }

    pub fn constrain(&self, u: &[f64]) -> ParameterDraw {
        debug_assert_eq!(u.len(), self.dim());
        let na = self.n_alpha();
        let alpha = u[..na].iter().map(|&x| exp(x)).collect();
        let omega = exp(exp(u[na]));
        let beta = logistic(u[na + 1]);
        let off = self.pi_offset();
        let pi = match self.variant {
            Variant::HmmLag => {
                let mut logit_pi = u[off];
                let mut pi = Vec::with_capacity(na);
                pi.push(logistic(logit_pi));
                for &gap in &u[off + 1..off + na] {
                    logit_pi -= exp(gap);
                    pi.push(logistic(logit_pi));
                }
                pi
            }
            _ => alloc::vec![logistic(u[off])],
        };
        let nu = if self.variant == Variant::HmmNu { logistic(u[off + 1]) } else { 0.0 };
        ParameterDraw {
            emission: EmissionParams { alpha, omega, beta, gamma1: u[na + 2], gamma2: u[na + 3] },
            transition: TransitionParams { pi, nu },
        }
    }

    pub fn unconstrain(&self, theta: &ParameterDraw) -> Result<Vec<f64>, ModelError> {
        let e = &theta.emission;
        let t = &theta.transition;
        if e.alpha.len() != self.n_alpha() {
            return Err(ModelError::Dimension { expected: self.n_alpha(), got: e.alpha.len() });
        }
        if t.pi.len() != self.n_pi() {
            return Err(ModelError::Dimension { expected: self.n_pi(), got: t.pi.len() });
        }
        let bad = |name: &str, value: f64| ModelError::Constraint { name: name.into(), value };
        let mut u = Vec::with_capacity(self.dim());
        for &a in &e.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(bad("alpha", a));
            }
            u.push(ln(a));
        }
        if !(e.omega > 1.0 && e.omega.is_finite()) {
            return Err(bad("omega", e.omega));
        }
        u.push(ln(ln(e.omega)));
        if !(e.beta > 0.0 && e.beta < 1.0) {
            return Err(bad("beta", e.beta));
        }
        u.push(logit(e.beta));
        u.push(e.gamma1);
        u.push(e.gamma2);
        for &p in &t.pi {
            if !(p > 0.0 && p < 1.0) {
                return Err(bad("pi", p));
            }
        }
        u.push(logit(t.pi[0]));
        if self.variant == Variant::HmmLag {
            for w in t.pi.windows(2) {
                let gap = logit(w[0]) - logit(w[1]);
                if !(gap > 0.0) {
                    return Err(bad("pi (must be strictly decreasing)", w[1]));
                }
                u.push(ln(gap));
            }
        }
        if self.variant == Variant::HmmNu {
            if !(t.nu > 0.0 && t.nu < 1.0) {
                return Err(bad("nu", t.nu));
            }
            u.push(logit(t.nu));
        }
        Ok(u)
    }

    /// Log prior density of the unconstrained vector, i.e. the prior on the
    /// natural parameters plus the log-Jacobian of the constraining maps.
    pub fn log_prior(&self, u: &[f64], priors: &PriorConfig) -> f64 {
        let na = self.n_alpha();
        let mut lp = 0.0;
        for (k, &x) in u[..na].iter().enumerate() {
            lp += math::normal_logpdf(x, 0.0, priors.alpha_scale_rule.scale(k + 1));
        }
        // ln omega = exp(c) is half-normal; Jacobian d(ln omega)/dc = exp(c).
        let c = u[na];
        lp += math::half_normal_logpdf(exp(c), priors.omega_scale) + c;
        lp += math::normal_logpdf(u[na + 1], priors.beta_logit_loc, priors.beta_logit_scale);
        lp += math::normal_logpdf(u[na + 2], priors.gamma1_loc, priors.gamma1_scale);
        lp += math::normal_logpdf(u[na + 3], priors.gamma2_loc, priors.gamma2_scale);
        let off = self.pi_offset();
        lp += math::normal_logpdf(u[off], priors.pi_logit_loc, priors.pi_logit_scale);
        if self.variant == Variant::HmmLag {
            for &gap in &u[off + 1..off + na] {
                lp += math::normal_logpdf(gap, 0.0, 1.0);
            }
        }
        if self.variant == Variant::HmmNu {
            lp += math::normal_logpdf(u[off + 1], priors.nu_logit_loc, priors.nu_logit_scale);
        }
        lp
    }

    /// Exact draw from the prior in unconstrained coordinates.
    pub fn sample_prior(&self, priors: &PriorConfig, rng: &mut Rng) -> Vec<f64> {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let na = self.n_alpha();
        let mut u = Vec::with_capacity(self.dim());
        for k in 0..na {
            u.push(priors.alpha_scale_rule.scale(k + 1) * normal());
        }
        let ln_omega = (priors.omega_scale * normal()).abs();
        u.push(ln(ln_omega));
        u.push(priors.beta_logit_loc + priors.beta_logit_scale * normal());
        u.push(priors.gamma1_loc + priors.gamma1_scale * normal());
        u.push(priors.gamma2_loc + priors.gamma2_scale * normal());
        u.push(priors.pi_logit_loc + priors.pi_logit_scale * normal());
        if self.variant == Variant::HmmLag {
            for _ in 1..na {
                u.push(normal());
            }
        }
        if self.variant == Variant::HmmNu {
            u.push(priors.nu_logit_loc + priors.nu_logit_scale * normal());
        }
        u
    }

    /// Centre and spread of the prior per unconstrained coordinate, used to
    /// place initial sampler states.
    pub fn prior_center_and_scale(&self, priors: &PriorConfig) -> (Vec<f64>, Vec<f64>) {
        let na = self.n_alpha();
        let mut center = alloc::vec![0.0; na];
        let mut scale: Vec<f64> = (1..=na).map(|j| priors.alpha_scale_rule.scale(j)).collect();
        // Median of the half-normal on ln omega, in log coordinates.
        center.push(ln(0.674_489_75 * priors.omega_scale));
        scale.push(1.0);
        center.extend([priors.beta_logit_loc, priors.gamma1_loc, priors.gamma2_loc, priors.pi_logit_loc]);
        scale.extend([priors.beta_logit_scale, priors.gamma1_scale, priors.gamma2_scale, priors.pi_logit_scale]);
        if self.variant == Variant::HmmLag {
            center.extend(core::iter::repeat_n(0.0, na - 1));
            scale.extend(core::iter::repeat_n(1.0, na - 1));
        }
        if self.variant == Variant::HmmNu {
            center.push(priors.nu_logit_loc);
            scale.push(priors.nu_logit_scale);
        }
        (center, scale)
    }
}

/// A triangle together with the parameters and latent states that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPredictive {
    pub variant: Variant,
    pub unconstrained: Vec<f64>,
    pub theta: ParameterDraw,
    /// `states[i][j]` for 0-based row and period.
    pub states: Vec<Vec<State>>,
    pub triangle: Triangle,
}

/// Draws parameters from the prior, then a full `n x m` triangle with
/// `y[i, 1] = y_initial` and the chain starting in the body.
pub fn simulate_prior_predictive(
    variant: Variant,
    n: usize,
    m: usize,
    priors: &PriorConfig,
    seed: u64,
    y_initial: f64,
) -> Result<PriorPredictive, SimulationError> {
    priors.validate()?;
    if n < 2 || m < 2 {
        return Err(TriangleError::TooSmall { n, m }.into());
    }
    let layout = ParamLayout::new(variant, m);
    let mut rng = rng::rng_from_seed(seed);
    let u = layout.sample_prior(priors, &mut rng);
    let theta = layout.constrain(&u);
    let (states, triangle) = simulate_triangle(&theta, variant, n, m, y_initial, &mut rng)?;
    Ok(PriorPredictive { variant, unconstrained: u, theta, states, triangle })
}

/// Forward-simulates latent states and losses for a full triangle.
pub fn simulate_triangle(
    theta: &ParameterDraw,
    variant: Variant,
    n: usize,
    m: usize,
    y_initial: f64,
    rng: &mut Rng,
) -> Result<(Vec<Vec<State>>, Triangle), SimulationError> {
    let table = EmissionTable::new(&theta.emission, m);
    let mut states = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 1..=n {
        let mut z = alloc::vec![State::Body; m];
        let mut y = alloc::vec![y_initial; m];
        for j in 2..=m {
            let row = transition_matrix(variant, &theta.transition, j - 1)[z[j - 2].index()];
            let u: f64 = rng.random();
            z[j - 1] = if u < row[0] { State::Body } else { State::Tail };
            let eps: f64 = StandardNormal.sample(rng);
            let next = table.sample(z[j - 1], j, y[j - 2], eps);
            if !(next.is_finite() && next > 0.0) {
                return Err(SimulationError::Overflow { i, j });
            }
            y[j - 1] = next;
        }
        states.push(z);
        rows.push(y);
    }
    Ok((states, Triangle::from_rows(rows, m)?))
}
