//! Parallel drivers around the core algorithms. Every unit of work owns a
//! seed derived from its index, so results match the sequential core
//! functions exactly regardless of thread count.

use lossdev_core::inference::{
    hmm_draws, run_chain, viterbi, ChainOutput, HmmPosterior, InitSpec, LogDensity, PosteriorDraws, SamplerConfig,
};
use lossdev_core::model::{ParamLayout, PriorConfig, State};
use lossdev_core::predict::{
    self, attach_densities, draw_seed, one_step_for_kernel, simulate_draw, ModelSpec, PredictionSet, CAP_MULTIPLE,
};
use lossdev_core::rng;
use lossdev_core::sbc::{run_replication, Fitter, SbcConfig, SbcReport};
use lossdev_core::twostep::{two_step_draws, two_step_init, TwoStepPosterior};
use lossdev_core::{Cell, Triangle};
use rayon::prelude::*;

use crate::error::Result;

/// Posterior draws plus per-chain sampler statistics.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: ModelSpec,
    pub draws: PosteriorDraws,
    pub swap_rates: Vec<f64>,
    pub step_scales: Vec<f64>,
}

fn run_chains<T: LogDensity + Sync>(target: &T, init: &InitSpec, sampler: &SamplerConfig) -> Result<Vec<ChainOutput>> {
    Ok((0..sampler.chains)
        .into_par_iter()
        .map(|c| run_chain(target, init, sampler, c))
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Fits `model` to `train` with chains running concurrently.
pub fn fit(model: ModelSpec, train: &Triangle, priors: &PriorConfig, sampler: &SamplerConfig) -> Result<Fit> {
    sampler.validate()?;
    priors.validate()?;
    let (chains, layout) = match model {
        ModelSpec::Hmm { variant } => {
            let target = HmmPosterior::new(train, variant, priors);
            let init = lossdev_core::inference::hmm_init(&target.layout, priors);
            (run_chains(&target, &init, sampler)?, Layout::Hmm(target.layout))
        }
        ModelSpec::TwoStep { config } => {
            let target = TwoStepPosterior::new(train, config, priors)?;
            let init = two_step_init(&target.layout, priors);
            (run_chains(&target, &init, sampler)?, Layout::TwoStep(target.layout))
        }
    };
    let swap_rates = chains.iter().map(|c| c.swap_rate).collect();
    let step_scales = chains.iter().map(|c| c.step_scale).collect();
    let draws = match layout {
        Layout::Hmm(l) => hmm_draws(&l, sampler, chains),
        Layout::TwoStep(l) => two_step_draws(&l, sampler, chains),
    };
    Ok(Fit { model, draws, swap_rates, step_scales })
}

enum Layout {
    Hmm(ParamLayout),
    TwoStep(lossdev_core::twostep::TwoStepLayout),
}

/// Posterior-predictive trajectories for every unobserved cell up to
/// `horizon`, with one-step densities attached for `test` cells.
pub fn predict(
    fit: &Fit,
    train: &Triangle,
    test: &[Cell],
    horizon: usize,
    cap_base: f64,
    seed: u64,
) -> Result<PredictionSet> {
    if !(cap_base > 0.0 && cap_base.is_finite()) {
        return Err(predict::PredictError::CapBase(cap_base).into());
    }
    if horizon < train.n_development() {
        return Err(predict::PredictError::Horizon { horizon, n_development: train.n_development() }.into());
    }
    train.check_test_cells(test)?;
    let cap = CAP_MULTIPLE * cap_base;
    let reach = test.iter().map(|c| c.j).max().unwrap_or(0).max(horizon);
    let m = train.n_development();
    let per_draw: Vec<_> = fit
        .draws
        .draws
        .par_iter()
        .enumerate()
        .map(|(s, d)| {
            let kernel = fit.model.kernel(&d.unconstrained, m, reach);
            let traj = simulate_draw(&kernel, train, horizon, cap, &mut rng::rng_from_seed(draw_seed(seed, s)));
            let dens = if test.is_empty() { Vec::new() } else { one_step_for_kernel(&kernel, train, test) };
            (traj, dens)
        })
        .collect();
    let (trajectories, densities): (Vec<_>, Vec<_>) = per_draw.into_iter().unzip();
    let mut set = predict::assemble(train, horizon, cap, &trajectories);
    if !test.is_empty() {
        attach_densities(&mut set, test, &densities)?;
    }
    Ok(set)
}

/// Tail share of the Viterbi state at each training cell across draws,
/// indexed `[i - 1][j - 1]`. Only defined for the hidden Markov models.
pub fn viterbi_tail_share(fit: &Fit, train: &Triangle) -> Option<Vec<Vec<f64>>> {
    let ModelSpec::Hmm { variant } = fit.model else { return None };
    let layout = ParamLayout::new(variant, train.n_development());
    let zero = || train.rows().iter().map(|r| vec![0usize; r.len()]).collect::<Vec<_>>();
    let votes = fit
        .draws
        .draws
        .par_iter()
        .map(|d| {
            let path = viterbi(train, &layout.constrain(&d.unconstrained), variant);
            path.rows.iter().map(|r| r.iter().map(|&s| usize::from(s == State::Tail)).collect::<Vec<_>>()).collect()
        })
        .reduce(zero, |mut a: Vec<Vec<usize>>, b| {
            for (ra, rb) in a.iter_mut().zip(&b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            a
        });
    let n = fit.draws.len().max(1) as f64;
    Some(votes.iter().map(|r| r.iter().map(|&v| v as f64 / n).collect()).collect())
}

/// Calibration replications run concurrently, assembled in order.
pub fn sbc<F: Fitter + Sync>(cfg: &SbcConfig, fitter: &F) -> Result<SbcReport> {
    cfg.validate()?;
    let reps = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r, fitter))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SbcReport::assemble(cfg, reps))
}
