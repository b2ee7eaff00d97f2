//! Posterior-predictive trajectories for unobserved cells and one-step-ahead
//! predictive densities for scoring.
//!
//! Both the hidden Markov variants and the two-step baseline reduce to a
//! [`FilterKernel`] per posterior draw: an emission table plus transition
//! matrices. Everything here works on kernels, so both models share the
//! same simulation, capping and scoring code.

use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::inference::{FilterKernel, PosteriorDraws};
use crate::math::{ln, log_sum_exp2};
use crate::model::{ParamLayout, State, Variant};
use crate::rng::{self, tags, Rng};
use crate::triangle::{Cell, Triangle, TriangleError};
use crate::twostep::{TwoStepConfig, TwoStepLayout};

/// Predictions are clamped at this multiple of the cap base.
pub const CAP_MULTIPLE: f64 = 100.0;

/// Fan-chart probability levels.
pub const FAN_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error("cap base must be positive and finite, got {0}")]
    CapBase(f64),
    #[error("horizon {horizon} is shorter than the training triangle ({n_development})")]
    Horizon { horizon: usize, n_development: usize },
    #[error("non-finite predictive density at cell ({i}, {j}) for draw {draw}")]
    NonFinite { i: usize, j: usize, draw: usize },
}

/// The model a set of posterior draws belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    Hmm { variant: Variant },
    TwoStep { config: TwoStepConfig },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Hmm { variant } => variant.name(),
            ModelSpec::TwoStep { .. } => "twostep",
        }
    }

    /// Filter kernel of one unconstrained draw, covering periods up to
    /// `horizon`.
    pub fn kernel(&self, u: &[f64], n_development: usize, horizon: usize) -> FilterKernel {
        match *self {
            ModelSpec::Hmm { variant } => {
                let layout = ParamLayout::new(variant, n_development);
                FilterKernel::new(&layout.constrain(u), variant, horizon)
            }
            ModelSpec::TwoStep { config } => TwoStepLayout::new(config, n_development).kernel(u, horizon),
        }
    }

    /// Kernels of every draw, in draw order.
    pub fn kernels(&self, draws: &PosteriorDraws, n_development: usize, horizon: usize) -> Vec<FilterKernel> {
        draws.draws.iter().map(|d| self.kernel(&d.unconstrained, n_development, horizon)).collect()
    }
}

/// Predictive output for one unobserved cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub i: usize,
    pub j: usize,
    /// One trajectory value per draw, already capped.
    pub samples: Vec<f64>,
    pub states: Vec<State>,
    /// Observed value, when the cell belongs to a scored test set.
    pub observed: Option<f64>,
    /// One-step-ahead log density of the observed value per draw.
    pub log_densities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub cap: f64,
    pub n_draws: usize,
    /// Cells ordered by row, then development period.
    pub cells: Vec<CellPrediction>,
}

impl PredictionSet {
    pub fn get(&self, i: usize, j: usize) -> Option<&CellPrediction> {
        self.cells.iter().find(|c| c.i == i && c.j == j)
    }

    /// Cells carrying an observed value and densities.
    pub fn scored_cells(&self) -> impl Iterator<Item = &CellPrediction> {
        self.cells.iter().filter(|c| c.observed.is_some() && c.log_densities.is_some())
    }
}

/// Trajectory of one draw over every unobserved cell, in the order of
/// [`future_cells`].
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTrajectory {
    pub values: Vec<f64>,
    pub states: Vec<State>,
}

/// Cells `(i, j)` with `J_i < j <= horizon`, by row then period.
pub fn future_cells(train: &Triangle, horizon: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 1..=train.n_experience() {
        for j in train.row_len(i) + 1..=horizon {
            out.push((i, j));
        }
    }
    out
}

fn sample_state(probs: [f64; 2], rng: &mut Rng) -> State {
    let u: f64 = rng.random();
    if u < probs[0] {
        State::Body
    } else {
        State::Tail
    }
}

/// Free-running trajectory of one draw. The state at each row's last
/// observed period is drawn from its filtered distribution; each later
/// loss is clamped to `cap` before it conditions the next step.
pub fn simulate_draw(kernel: &FilterKernel, train: &Triangle, horizon: usize, cap: f64, rng: &mut Rng) -> DrawTrajectory {
    let mut values = Vec::new();
    let mut states = Vec::new();
    for row in train.rows() {
        if row.len() >= horizon {
            continue;
        }
        let ln_row: Vec<f64> = row.iter().map(|&y| ln(y)).collect();
        let filtered = kernel.row_forward(&ln_row).filtered_last();
        let mut z = sample_state(filtered, rng);
        let mut y = *row.last().expect("rows are non-empty");
        for j in row.len() + 1..=horizon {
            z = sample_state(kernel.transition_probs(j)[z.index()], rng);
            let eps: f64 = StandardNormal.sample(rng);
            let next = kernel.table().sample(z, j, y, eps);
            y = if next.is_nan() { cap } else { next.clamp(f64::MIN_POSITIVE, cap) };
            values.push(y);
            states.push(z);
        }
    }
    DrawTrajectory { values, states }
}

/// Seed of draw `s` within a prediction run.
pub fn draw_seed(seed: u64, s: usize) -> u64 {
    rng::derive_seed(seed, tags::PREDICT, s as u64)
}

fn check_cap(cap_base: f64) -> Result<f64, PredictError> {
    if cap_base > 0.0 && cap_base.is_finite() {
        Ok(CAP_MULTIPLE * cap_base)
    } else {
        Err(PredictError::CapBase(cap_base))
    }
}

/// Collects per-draw trajectories into a [`PredictionSet`] without scores.
pub fn assemble(train: &Triangle, horizon: usize, cap: f64, trajectories: &[DrawTrajectory]) -> PredictionSet {
    let cells = future_cells(train, horizon);
    let n = trajectories.len();
    let cells = cells
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| CellPrediction {
            i,
            j,
            samples: trajectories.iter().map(|t| t.values[k]).collect(),
            states: trajectories.iter().map(|t| t.states[k]).collect(),
            observed: None,
            log_densities: None,
        })
        .collect();
    PredictionSet { cap, n_draws: n, cells }
}

/// Simulates every unobserved cell up to `horizon` for each kernel. Draw `s`
/// uses its own stream derived from `seed`, so any subset or reordering of
/// the work reproduces the same values.
pub fn simulate_with_kernels(
    kernels: &[FilterKernel],
    train: &Triangle,
    horizon: usize,
    cap_base: f64,
    seed: u64,
) -> Result<PredictionSet, PredictError> {
    let cap = check_cap(cap_base)?;
    if horizon < train.n_development() {
        return Err(PredictError::Horizon { horizon, n_development: train.n_development() });
    }
    let trajectories: Vec<DrawTrajectory> = kernels
        .iter()
        .enumerate()
        .map(|(s, k)| simulate_draw(k, train, horizon, cap, &mut rng::rng_from_seed(draw_seed(seed, s))))
        .collect();
    Ok(assemble(train, horizon, cap, &trajectories))
}

/// Posterior-predictive simulation for all unobserved cells up to
/// `horizon`, clamped at `100 * cap_base`.
pub fn simulate_predictions(
    model: ModelSpec,
    draws: &PosteriorDraws,
    train: &Triangle,
    horizon: usize,
    cap_base: f64,
    seed: u64,
) -> Result<PredictionSet, PredictError> {
    let kernels = model.kernels(draws, train.n_development(), horizon);
    simulate_with_kernels(&kernels, train, horizon, cap_base, seed)
}

/// One-step-ahead log densities of observed test values under one kernel,
/// in the order of `test` sorted by row then period. The forward filter
/// continues through the observed values, so the densities along a row sum
/// to the row's conditional log likelihood.
pub fn one_step_for_kernel(kernel: &FilterKernel, train: &Triangle, test: &[Cell]) -> Vec<f64> {
    let mut sorted: Vec<Cell> = test.to_vec();
    sorted.sort_by_key(|c| (c.i, c.j));
    let mut out = Vec::with_capacity(sorted.len());
    let mut k = 0;
    while k < sorted.len() {
        let i = sorted[k].i;
        let row = train.row(i);
        let ln_row: Vec<f64> = row.iter().map(|&y| ln(y)).collect();
        let mut f = *kernel.row_forward(&ln_row).log_forward.last().expect("rows are non-empty");
        let mut ln_prev = *ln_row.last().expect("rows are non-empty");
        while k < sorted.len() && sorted[k].i == i {
            let c = sorted[k];
            let ln_y = ln(c.loss);
            let next = kernel.step(f, c.j, ln_y, ln_prev);
            out.push(log_sum_exp2(next[0], next[1]) - log_sum_exp2(f[0], f[1]));
            f = next;
            ln_prev = ln_y;
            k += 1;
        }
    }
    out
}

/// Per-cell, per-draw one-step-ahead log densities, with cells ordered by
/// row then period. Test cells must continue their training rows without
/// gaps.
pub fn one_step_densities(kernels: &[FilterKernel], train: &Triangle, test: &[Cell]) -> Result<Vec<Vec<f64>>, PredictError> {
    train.check_test_cells(test)?;
    let mut sorted: Vec<Cell> = test.to_vec();
    sorted.sort_by_key(|c| (c.i, c.j));
    let mut by_cell = alloc::vec![Vec::with_capacity(kernels.len()); sorted.len()];
    for (s, kernel) in kernels.iter().enumerate() {
        for (k, lp) in one_step_for_kernel(kernel, train, &sorted).into_iter().enumerate() {
            if !lp.is_finite() {
                return Err(PredictError::NonFinite { i: sorted[k].i, j: sorted[k].j, draw: s });
            }
            by_cell[k].push(lp);
        }
    }
    Ok(by_cell)
}

/// Attaches observed test values and their one-step densities to a
/// prediction set. Test cells beyond the prediction horizon are ignored.
pub fn attach_scores(
    set: &mut PredictionSet,
    kernels: &[FilterKernel],
    train: &Triangle,
    test: &[Cell],
) -> Result<(), PredictError> {
    train.check_test_cells(test)?;
    let per_draw: Vec<Vec<f64>> = kernels.iter().map(|k| one_step_for_kernel(k, train, test)).collect();
    attach_densities(set, test, &per_draw)
}

/// Like [`attach_scores`], with the per-draw densities (from
/// [`one_step_for_kernel`]) already computed.
pub fn attach_densities(set: &mut PredictionSet, test: &[Cell], per_draw: &[Vec<f64>]) -> Result<(), PredictError> {
    let mut sorted: Vec<Cell> = test.to_vec();
    sorted.sort_by_key(|c| (c.i, c.j));
    for (s, d) in per_draw.iter().enumerate() {
        if let Some(k) = d.iter().position(|x| !x.is_finite()) {
            return Err(PredictError::NonFinite { i: sorted[k].i, j: sorted[k].j, draw: s });
        }
    }
    for (k, c) in sorted.iter().enumerate() {
        if let Some(cell) = set.cells.iter_mut().find(|p| p.i == c.i && p.j == c.j) {
            cell.observed = Some(c.loss);
            cell.log_densities = Some(per_draw.iter().map(|d| d[k]).collect());
        }
    }
    Ok(())
}

/// Simulates predictions and scores them against `test` in one call.
#[allow(clippy::too_many_arguments)]
pub fn predict_and_score(
    model: ModelSpec,
    draws: &PosteriorDraws,
    train: &Triangle,
    test: &[Cell],
    horizon: usize,
    cap_base: f64,
    seed: u64,
) -> Result<PredictionSet, PredictError> {
    let reach = test.iter().map(|c| c.j).max().unwrap_or(0).max(horizon);
    let kernels = model.kernels(draws, train.n_development(), reach);
    let mut set = simulate_with_kernels(&kernels, train, horizon, cap_base, seed)?;
    attach_scores(&mut set, &kernels, train, test)?;
    Ok(set)
}

/// Largest loss over the training triangle and any supplied test cells.
pub fn cap_base(train: &Triangle, test: &[Cell]) -> f64 {
    test.iter().map(|c| c.loss).fold(train.max_loss(), f64::max)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanRow {
    pub i: usize,
    pub j: usize,
    /// Quantiles at [`FAN_LEVELS`].
    pub quantiles: [f64; 5],
}

pub fn fan_quantiles(set: &PredictionSet) -> Vec<FanRow> {
    set.cells
        .iter()
        .filter(|c| !c.samples.is_empty())
        .map(|c| {
            let mut s = c.samples.clone();
            s.sort_by(f64::total_cmp);
            FanRow { i: c.i, j: c.j, quantiles: FAN_LEVELS.map(|p| quantile(&s, p)) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::forward_log_likelihood;
    use crate::model::{EmissionParams, EmissionTable, ParameterDraw, TransitionParams};
    use alloc::vec;
    use proptest::prelude::*;

    fn theta(alpha: Vec<f64>, pi: f64, g1: f64) -> ParameterDraw {
        ParameterDraw {
            emission: EmissionParams { alpha, omega: 1.4, beta: 0.6, gamma1: g1, gamma2: 0.0 },
            transition: TransitionParams { pi: vec![pi], nu: 0.0 },
        }
    }

    fn train() -> Triangle {
        Triangle::from_rows(vec![vec![10.0, 15.0, 17.0, 17.5], vec![12.0, 17.0, 19.5], vec![9.0, 14.0], vec![11.0]], 4)
            .unwrap()
    }

    #[test]
    fn degenerate_body_draw_stays_flat() {
        let th = theta(vec![1.0; 3], 1.0, -200.0);
        let k = FilterKernel::new(&th, Variant::Hmm, 4);
        let t = train();
        let set = simulate_with_kernels(&[k.clone(), k], &t, 4, t.max_loss(), 1).unwrap();
        for c in &set.cells {
            let last = *t.row(c.i).last().unwrap();
            assert!(c.samples.iter().all(|&y| (y - last).abs() < 1e-9 * last), "{c:?}");
            assert!(c.states.iter().all(|&s| s == State::Body));
        }
    }

    #[test]
    fn tail_at_last_period_is_absorbing() {
        // pi = 0: every transition goes to the tail, so filtered state at J_i
        // (for J_i >= 2) is tail and stays there.
        let th = theta(vec![1.3; 3], 1e-9, -3.0);
        let k = FilterKernel::new(&th, Variant::Hmm, 4);
        let t = train();
        let set = simulate_with_kernels(&[k], &t, 4, t.max_loss(), 9).unwrap();
        for c in &set.cells {
            assert_eq!(c.states[0], State::Tail);
        }
    }

    #[test]
    fn capping_bounds_explosive_draws() {
        let th = theta(vec![1e6; 3], 1.0, 2.0);
        let k = FilterKernel::new(&th, Variant::Hmm, 4);
        let t = train();
        let kernels = vec![k; 50];
        let set = simulate_with_kernels(&kernels, &t, 4, 50.0, 3).unwrap();
        assert_eq!(set.cap, 5000.0);
        assert!(set.cells.iter().flat_map(|c| &c.samples).all(|&y| y <= 5000.0 && y > 0.0));
        assert!(set.cells.iter().flat_map(|c| &c.samples).any(|&y| y == 5000.0));
    }

    #[test]
    fn no_future_cells_for_full_rows() {
        let t = Triangle::from_rows(vec![vec![1.0, 2.0], vec![1.0, 2.0]], 2).unwrap();
        let k = FilterKernel::new(&theta(vec![1.5], 0.5, -1.0), Variant::Hmm, 2);
        let set = simulate_with_kernels(&[k], &t, 2, 2.0, 0).unwrap();
        assert!(set.cells.is_empty());
    }

    #[test]
    fn single_state_density_is_body_lognormal() {
        let th = theta(vec![1.5, 1.2, 1.1], 1.0, -2.0);
        let k = FilterKernel::new(&th, Variant::Hmm, 4);
        let t = train();
        let test = [Cell { i: 3, j: 3, loss: 16.0 }];
        let d = one_step_densities(&[k], &t, &test).unwrap();
        let table = EmissionTable::new(&th.emission, 4);
        let expected = table.log_density(State::Body, 3, ln(16.0), ln(14.0));
        assert!((d[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn capping_leaves_densities_alone() {
        let th = theta(vec![1.5, 1.2, 1.1], 0.7, -2.0);
        let k = FilterKernel::new(&th, Variant::Hmm, 4);
        let t = train();
        let test = [Cell { i: 4, j: 2, loss: 16.0 }, Cell { i: 4, j: 3, loss: 18.0 }];
        let mut a = simulate_with_kernels(core::slice::from_ref(&k), &t, 4, 1e-3, 0).unwrap();
        let mut b = simulate_with_kernels(core::slice::from_ref(&k), &t, 4, 1e6, 0).unwrap();
        attach_scores(&mut a, core::slice::from_ref(&k), &t, &test).unwrap();
        attach_scores(&mut b, &[k], &t, &test).unwrap();
        for (x, y) in a.scored_cells().zip(b.scored_cells()) {
            assert_eq!(x.log_densities, y.log_densities);
        }
        assert_eq!(a.scored_cells().count(), 2);
    }

    #[test]
    fn deterministic_per_seed_and_draw_local() {
        let t = train();
        let ks: Vec<FilterKernel> =
            [0.3, 0.6, 0.9].iter().map(|&p| FilterKernel::new(&theta(vec![1.4, 1.1, 1.05], p, -3.0), Variant::Hmm, 6)).collect();
        let a = simulate_with_kernels(&ks, &t, 6, 20.0, 11).unwrap();
        let b = simulate_with_kernels(&ks, &t, 6, 20.0, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_with_kernels(&ks, &t, 6, 20.0, 12).unwrap();
        assert_ne!(a, c);
        // Draw 2 alone, simulated with its own stream, matches the batch.
        let mut rng = rng::rng_from_seed(draw_seed(11, 2));
        let single = simulate_draw(&ks[2], &t, 6, 2000.0, &mut rng);
        let batch: Vec<f64> = a.cells.iter().map(|c| c.samples[2]).collect();
        assert_eq!(single.values, batch);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 5.0);
        assert!((quantile(&s, 0.25) - 2.0).abs() < 1e-15);
        assert!((quantile(&[1.0, 2.0], 0.5) - 1.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn one_step_chain_rule(
            pi in 0.05f64..0.95,
            nu in 0.05f64..0.95,
            a in 1.0f64..2.0,
            g1 in -4.0f64..0.0,
            tail in prop::collection::vec(1.0f64..1.3, 1..4),
            variant in prop_oneof![Just(Variant::Hmm), Just(Variant::HmmNu)],
        ) {
            let mut th = theta(vec![a, 1.2, 1.1, 1.05, 1.02], pi, g1);
            th.transition.nu = if variant == Variant::HmmNu { nu } else { 0.0 };
            let prefix = vec![5.0, 7.5];
            let mut full = prefix.clone();
            for f in &tail {
                let last = *full.last().unwrap();
                full.push(last * f);
            }
            let m = full.len();
            let train = Triangle::from_rows(vec![prefix.clone(), vec![2.0]], m).unwrap();
            let whole = Triangle::from_rows(vec![full.clone(), vec![2.0]], m).unwrap();
            let test: Vec<Cell> = (3..=m).map(|j| Cell { i: 1, j, loss: full[j - 1] }).collect();
            let k = FilterKernel::new(&th, variant, m);
            let d = one_step_for_kernel(&k, &train, &test);
            let total: f64 = d.iter().sum();
            let expected = forward_log_likelihood(&whole, &th, variant).unwrap().total_log_likelihood
                - forward_log_likelihood(&train, &th, variant).unwrap().total_log_likelihood;
            prop_assert!((total - expected).abs() < 1e-10);
        }

        #[test]
        fn tail_steps_never_shrink_the_drift(omega in 1.0001f64..3.0, beta in 0.01f64..0.99, j in 2usize..30) {
            let th = ParameterDraw {
                emission: EmissionParams { alpha: vec![1.2], omega, beta, gamma1: -2.0, gamma2: 0.0 },
                transition: TransitionParams { pi: vec![0.5], nu: 0.0 },
            };
            let k = FilterKernel::new(&th, Variant::Hmm, 30);
            prop_assert!(k.table().drift(State::Tail, j) >= 0.0);
        }

        #[test]
        fn samples_respect_cap(seed in any::<u64>(), cap_base in 1.0f64..100.0, g1 in -3.0f64..3.0) {
            let th = theta(vec![3.0, 2.0, 1.5], 0.5, g1);
            let t = train();
            let k = FilterKernel::new(&th, Variant::Hmm, 8);
            let set = simulate_with_kernels(&[k.clone(), k], &t, 8, cap_base, seed).unwrap();
            prop_assert!(set.cells.iter().flat_map(|c| &c.samples).all(|&y| y <= 100.0 * cap_base && y > 0.0));
        }
    }
}
