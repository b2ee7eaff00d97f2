//! Simulation-based calibration.
//!
//! Each replication draws parameters and a full triangle from the prior
//! predictive, fits the upper triangle with cell `(1, M)` held out, and
//! records the rank of every true quantity among thinned posterior values.
//! If the sampler is correct the ranks are uniform on `0..=S_thin`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::inference::{
    assemble_draws, sample_posterior, viterbi, ChainOutput, FilterKernel, HmmPosterior,
    InferenceError, PosteriorDraws, SamplerConfig,
};
use crate::math::{exp, ln};
use crate::model::{simulate_prior_predictive, ParamLayout, PriorConfig, SimulationError, State, Variant};
use crate::predict::{future_cells, simulate_with_kernels};
use crate::rng::{self, tags};
use crate::triangle::Triangle;

/// Regeneration attempts before a replication gives up.
pub const MAX_REGENERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SbcError {
    #[error("invalid calibration configuration: {0}")]
    Config(String),
    #[error("replication {replication}: no finite triangle after {attempts} draws")]
    Regeneration { replication: usize, attempts: usize },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbcConfig {
    pub variant: Variant,
    pub n: usize,
    pub m: usize,
    pub priors: PriorConfig,
    pub replications: usize,
    pub sampler: SamplerConfig,
    /// Keep every `thin`-th posterior draw for ranking.
    pub thin: usize,
    pub bins: usize,
    pub seed: u64,
    pub y_initial: f64,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hmm,
            n: 10,
            m: 10,
            priors: PriorConfig::calibration(),
            replications: 200,
            sampler: SamplerConfig::default(),
            thin: 10,
            bins: 20,
            seed: 0,
            y_initial: 1.0,
        }
    }
}

impl SbcConfig {
    pub fn validate(&self) -> Result<(), SbcError> {
        let bad = |m: String| Err(SbcError::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n < 2 || self.m < 2 {
            return bad(format!("triangle must be at least 2 x 2, got {} x {}", self.n, self.m));
        }
        if self.thin == 0 || !self.sampler.total_draws().is_multiple_of(self.thin) {
            return bad(format!("thin {} must divide the {} posterior draws", self.thin, self.sampler.total_draws()));
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        if !(self.y_initial > 0.0 && self.y_initial.is_finite()) {
            return bad(format!("y_initial must be positive, got {}", self.y_initial));
        }
        self.sampler.validate()?;
        self.priors.validate().map_err(InferenceError::from)?;
        Ok(())
    }

    /// Largest possible rank, `S / thin`.
    pub fn max_rank(&self) -> usize {
        self.sampler.total_draws() / self.thin
    }

    /// Names of the ranked quantities: natural parameters, the training
    /// log likelihood, and the held-out ultimate loss.
    pub fn quantities(&self) -> Vec<String> {
        let mut q = ParamLayout::new(self.variant, self.m).natural_names();
        q.push("log_likelihood".into());
        q.push(format!("ultimate[1,{}]", self.m));
        q
    }

    /// Seed of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        rng::derive_seed(self.seed, tags::REPLICATION, r as u64)
    }
}

/// Produces posterior draws for one replication's training triangle.
pub trait Fitter {
    fn fit(
        &self,
        train: &Triangle,
        variant: Variant,
        priors: &PriorConfig,
        config: &SamplerConfig,
    ) -> Result<PosteriorDraws, InferenceError>;
}

/// The real sampler.
#[derive(Debug, Clone, Copy, Default)]
pub struct PosteriorFitter;

impl Fitter for PosteriorFitter {
    fn fit(
        &self,
        train: &Triangle,
        variant: Variant,
        priors: &PriorConfig,
        config: &SamplerConfig,
    ) -> Result<PosteriorDraws, InferenceError> {
        sample_posterior(train, variant, priors, config)
    }
}

/// Ignores the data and returns exact prior draws, marked converged. Ranks
/// of the parameters under this fitter are uniform by construction, which
/// checks the harness independently of the sampler.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorOracle;

impl Fitter for PriorOracle {
    fn fit(
        &self,
        train: &Triangle,
        variant: Variant,
        priors: &PriorConfig,
        config: &SamplerConfig,
    ) -> Result<PosteriorDraws, InferenceError> {
        let layout = ParamLayout::new(variant, train.n_development());
        let chains = (0..config.chains)
            .map(|c| {
                let mut rng = rng::rng_from_seed(rng::derive_seed(config.seed, tags::CHAIN, c as u64));
                let draws: Vec<Vec<f64>> = (0..config.iterations).map(|_| layout.sample_prior(priors, &mut rng)).collect();
                let log_density = draws.iter().map(|u| layout.log_prior(u, priors)).collect();
                ChainOutput { chain: c, draws, log_density, acceptance_rate: 1.0, swap_rate: 0.0, step_scale: 0.0 }
            })
            .collect();
        let mut post = assemble_draws(config, chains, layout.unconstrained_names(), layout.natural_names(), |u| {
            layout.natural_values(&layout.constrain(u))
        });
        post.converged = true;
        Ok(post)
    }
}

/// Count of posterior values strictly below the simulated value.
pub fn rank_statistic(simulated: f64, posterior: &[f64]) -> usize {
    posterior.iter().filter(|&&x| x < simulated).count()
}

/// Probability that a uniform rank on `0..=max_rank` falls in each of
/// `bins` equal-width bins.
pub fn bin_probabilities(max_rank: usize, bins: usize) -> Vec<f64> {
    let mut counts = alloc::vec![0usize; bins];
    for r in 0..=max_rank {
        counts[bin_of(r, max_rank, bins)] += 1;
    }
    counts.iter().map(|&c| c as f64 / (max_rank + 1) as f64).collect()
}

pub fn bin_of(rank: usize, max_rank: usize, bins: usize) -> usize {
    rank * bins / (max_rank + 1)
}

fn binomial_log_pmf(n: usize, p: f64, k: usize) -> f64 {
    let (n_f, k_f) = (n as f64, k as f64);
    let log_choose = libm::lgamma(n_f + 1.0) - libm::lgamma(k_f + 1.0) - libm::lgamma(n_f - k_f + 1.0);
    let term = |count: f64, prob: f64| if count == 0.0 { 0.0 } else { count * ln(prob) };
    log_choose + term(k_f, p) + term(n_f - k_f, 1.0 - p)
}

/// Smallest `k` with `P(X <= k) >= q` for `X ~ Binomial(n, p)`.
pub fn binomial_quantile(n: usize, p: f64, q: f64) -> usize {
    if p >= 1.0 {
        return n;
    }
    if p <= 0.0 {
        return 0;
    }
    let mut cdf = 0.0;
    for k in 0..=n {
        cdf += exp(binomial_log_pmf(n, p, k));
        if cdf >= q - 1e-12 {
            return k;
        }
    }
    n
}

/// Central 99% interval of a bin count under uniform ranks:
/// the 0.5% and 99.5% quantiles of `Binomial(kept, 1 / bins)`.
pub fn uniformity_band(kept: usize, bins: usize) -> (usize, usize) {
    let p = 1.0 / bins as f64;
    (binomial_quantile(kept, p, 0.005), binomial_quantile(kept, p, 0.995))
}

/// Fraction of cells with `j >= 2` whose recovered state equals the truth.
/// Both arguments are indexed `[row][period - 1]`; cells missing from either
/// side are skipped.
pub fn state_recovery_accuracy(truth: &[Vec<State>], recovered: &[Vec<Option<State>>]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (t, r) in truth.iter().zip(recovered) {
        for (a, b) in t.iter().zip(r).skip(1) {
            if let Some(b) = b {
                total += 1;
                hit += usize::from(a == b);
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Shortest interval containing `ceil(level * n)` of the values.
pub fn highest_density_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (libm::ceil(level * v.len() as f64) as usize).clamp(1, v.len());
    (0..=v.len() - k).map(|s| (v[s], v[s + k - 1])).min_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    /// Simulated triangles discarded for overflow before this one.
    pub regenerations: usize,
    pub converged: bool,
    pub max_rhat: f64,
    pub min_ess: f64,
    /// One rank per quantity; empty for dropped replications.
    pub ranks: Vec<usize>,
    pub accuracy: Option<f64>,
    /// Why the fit failed, when it did.
    pub error: Option<String>,
}

/// Training triangle for calibration: the upper triangle with cell `(1, M)`
/// also removed.
pub fn calibration_split(full: &Triangle) -> Result<Triangle, SbcError> {
    let (train, _) = full.split_upper_lower();
    let mut rows = train.rows().to_vec();
    if rows[0].len() == full.n_development() {
        rows[0].pop();
    }
    Ok(Triangle::from_rows(rows, full.n_development()).map_err(SimulationError::from)?)
}

fn modal(votes_tail: usize, total: usize) -> State {
    if 2 * votes_tail > total {
        State::Tail
    } else {
        State::Body
    }
}

/// Runs one replication.
pub fn run_replication<F: Fitter + ?Sized>(cfg: &SbcConfig, r: usize, fitter: &F) -> Result<ReplicationResult, SbcError> {
    let seed = cfg.replication_seed(r);
    let mut regenerations = 0;
    let sim = loop {
        let s = if regenerations == 0 { seed } else { rng::derive_seed(seed, tags::REGENERATE, regenerations as u64) };
        match simulate_prior_predictive(cfg.variant, cfg.n, cfg.m, &cfg.priors, s, cfg.y_initial) {
            Ok(sim) => break sim,
            Err(SimulationError::Overflow { .. }) if regenerations + 1 < MAX_REGENERATIONS => regenerations += 1,
            Err(SimulationError::Overflow { .. }) => {
                return Err(SbcError::Regeneration { replication: r, attempts: MAX_REGENERATIONS })
            }
            Err(e) => return Err(e.into()),
        }
    };
    let train = calibration_split(&sim.triangle)?;
    let sampler = SamplerConfig { seed: rng::derive_seed(seed, tags::FIT, 0), ..cfg.sampler.clone() };
    let dropped = |max_rhat, min_ess, error| ReplicationResult {
        replication: r,
        seed,
        regenerations,
        converged: false,
        max_rhat,
        min_ess,
        ranks: Vec::new(),
        accuracy: None,
        error,
    };
    let post = match fitter.fit(&train, cfg.variant, &cfg.priors, &sampler) {
        Ok(p) => p,
        Err(e) => return Ok(dropped(f64::NAN, f64::NAN, Some(format!("{e}")))),
    };
    let (max_rhat, min_ess) = (post.diagnostics.max_rhat, post.diagnostics.min_ess);
    if !post.converged {
        return Ok(dropped(max_rhat, min_ess, None));
    }

    let layout = ParamLayout::new(cfg.variant, cfg.m);
    let thinned: Vec<&[f64]> = post.draws.iter().step_by(cfg.thin).map(|d| d.unconstrained.as_slice()).collect();
    let mut ranks = Vec::new();
    let truth = layout.natural_values(&sim.theta);
    for (k, &t) in truth.iter().enumerate() {
        let column: Vec<f64> = post.draws.iter().step_by(cfg.thin).map(|d| d.natural[k]).collect();
        ranks.push(rank_statistic(t, &column));
    }

    let target = HmmPosterior::new(&train, cfg.variant, &cfg.priors);
    let ll: Vec<f64> = thinned.iter().map(|u| target.log_likelihood(u)).collect();
    ranks.push(rank_statistic(target.log_likelihood(&sim.unconstrained), &ll));

    let kernels: Vec<FilterKernel> =
        thinned.iter().map(|u| FilterKernel::new(&layout.constrain(u), cfg.variant, cfg.m)).collect();
    let cap_base = sim.triangle.max_loss();
    let preds = simulate_with_kernels(&kernels, &train, cfg.m, cap_base, rng::derive_seed(seed, tags::PREDICT, 0))
        .map_err(|e| SbcError::Config(format!("{e}")))?;
    let ultimate = preds.get(1, cfg.m).expect("cell (1, M) is held out");
    ranks.push(rank_statistic(sim.triangle.get(1, cfg.m).expect("full triangle"), &ultimate.samples));

    // Modal states: Viterbi over training cells, simulated states beyond.
    let mut tail_votes: Vec<Vec<usize>> = (0..cfg.n).map(|_| alloc::vec![0; cfg.m]).collect();
    for u in &thinned {
        let path = viterbi(&train, &layout.constrain(u), cfg.variant);
        for (i, row) in path.rows.iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                tail_votes[i][j] += usize::from(s == State::Tail);
            }
        }
    }
    for c in &preds.cells {
        tail_votes[c.i - 1][c.j - 1] += c.states.iter().filter(|&&s| s == State::Tail).count();
    }
    let known: Vec<(usize, usize)> = future_cells(&train, cfg.m);
    let recovered: Vec<Vec<Option<State>>> = (0..cfg.n)
        .map(|i| {
            (0..cfg.m)
                .map(|j| {
                    let observed = j < train.row_len(i + 1);
                    (observed || known.contains(&(i + 1, j + 1))).then(|| modal(tail_votes[i][j], thinned.len()))
                })
                .collect()
        })
        .collect();
    let accuracy = state_recovery_accuracy(&sim.states, &recovered);

    Ok(ReplicationResult {
        replication: r,
        seed,
        regenerations,
        converged: true,
        max_rhat,
        min_ess,
        ranks,
        accuracy: Some(accuracy),
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub quantity: String,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub config: SbcConfig,
    pub max_rank: usize,
    pub quantities: Vec<String>,
    pub replications: Vec<ReplicationResult>,
    pub kept: usize,
    pub dropped: usize,
    pub regenerations: usize,
    pub histograms: Vec<RankHistogram>,
    /// 99% band for every bin count.
    pub band: (usize, usize),
    pub accuracy_mean: Option<f64>,
    pub accuracy_hdi: Option<(f64, f64)>,
}

impl SbcReport {
    /// Aggregates replication results, which must be in replication order.
    pub fn assemble(config: &SbcConfig, replications: Vec<ReplicationResult>) -> Self {
        let quantities = config.quantities();
        let max_rank = config.max_rank();
        let kept_reps: Vec<&ReplicationResult> = replications.iter().filter(|r| r.converged).collect();
        let histograms = quantities
            .iter()
            .enumerate()
            .map(|(q, name)| {
                let mut counts = alloc::vec![0; config.bins];
                for r in &kept_reps {
                    counts[bin_of(r.ranks[q], max_rank, config.bins)] += 1;
                }
                RankHistogram { quantity: name.clone(), counts }
            })
            .collect();
        let acc: Vec<f64> = kept_reps.iter().filter_map(|r| r.accuracy).collect();
        let accuracy_mean = (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64);
        Self {
            config: config.clone(),
            max_rank,
            quantities,
            kept: kept_reps.len(),
            dropped: replications.len() - kept_reps.len(),
            regenerations: replications.iter().map(|r| r.regenerations).sum(),
            histograms,
            band: uniformity_band(kept_reps.len(), config.bins),
            accuracy_mean,
            accuracy_hdi: highest_density_interval(&acc, 0.95),
            replications,
        }
    }

    /// Number of bins within the band, per quantity.
    pub fn bins_in_band(&self) -> Vec<usize> {
        self.histograms
            .iter()
            .map(|h| h.counts.iter().filter(|&&c| c >= self.band.0 && c <= self.band.1).count())
            .collect()
    }

    /// Pearson chi-square statistic per quantity against the exact bin
    /// probabilities of a uniform rank.
    pub fn chi_square_statistics(&self) -> Vec<f64> {
        let probs = bin_probabilities(self.max_rank, self.config.bins);
        let n = self.kept as f64;
        self.histograms
            .iter()
            .map(|h| {
                h.counts
                    .iter()
                    .zip(&probs)
                    .map(|(&c, &p)| {
                        let e = n * p;
                        (c as f64 - e) * (c as f64 - e) / e
                    })
                    .sum()
            })
            .collect()
    }
}

/// Runs every replication in order.
pub fn run_sbc<F: Fitter + ?Sized>(cfg: &SbcConfig, fitter: &F) -> Result<SbcReport, SbcError> {
    cfg.validate()?;
    let reps = (0..cfg.replications).map(|r| run_replication(cfg, r, fitter)).collect::<Result<Vec<_>, _>>()?;
    Ok(SbcReport::assemble(cfg, reps))
}
