//! The `lossdev` command line.
//!
//! Each subcommand writes its artifacts into `--out` and returns an exit
//! code from [`crate::error::exit`]. Every artifact records the resolved
//! run configuration; the output directory itself is left out of that
//! record so reruns into different directories stay byte-identical.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lossdev_core::inference::SamplerConfig;
use lossdev_core::metrics::{ScoreReport, TriangleScore};
use lossdev_core::model::{simulate_prior_predictive, ParamLayout, PriorConfig, SimulationError, State, Variant};
use lossdev_core::predict::{cap_base, fan_quantiles, ModelSpec, PredictionSet};
use lossdev_core::rng::{self, tags};
use lossdev_core::sbc::{PosteriorFitter, SbcConfig, MAX_REGENERATIONS};
use lossdev_core::triangle::{summarize_link_ratios, SplitMode};
use lossdev_core::twostep::TwoStepConfig;
use lossdev_core::{Cell, Triangle};
use serde::Serialize;
use serde_json::json;

use crate::error::{exit, Error, Result};
use crate::io::{self, num, Table};
use crate::run::{self, Fit};
use crate::stats;

#[derive(Debug, Parser)]
#[command(name = "lossdev", version, about = "Hidden Markov loss development: fit, score, simulate and calibrate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write draws, diagnostics, states and predictions.
    Fit(FitArgs),
    /// Fit several models per triangle and compare them on held-out cells.
    Evaluate(EvaluateArgs),
    /// Draw parameters, latent states and a full triangle from the prior.
    Simulate(SimulateArgs),
    /// Simulation-based calibration of the posterior sampler.
    Sbc(SbcArgs),
    /// Empirical link-ratio summaries per group and transition.
    LinkRatios(LinkRatioArgs),
    /// Convert a wide triangle matrix to the long format.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Hmm,
    HmmNu,
    HmmLag,
    Twostep,
}

impl VariantArg {
    fn hmm(self) -> Option<Variant> {
        match self {
            VariantArg::Hmm => Some(Variant::Hmm),
            VariantArg::HmmNu => Some(Variant::HmmNu),
            VariantArg::HmmLag => Some(Variant::HmmLag),
            VariantArg::Twostep => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMode {
    LowerDiagonal,
    LastDiagonal,
    File,
}

fn parse_rho(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("not a period index: {x:?}"));
    Ok((p(lo)?, p(hi)?))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    /// Retained draws per chain.
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Metropolis transitions per retained draw.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tempered replicas per chain; 1 disables tempering.
    #[arg(long, default_value_t = 6)]
    pub temperatures: usize,
    #[arg(long, default_value_t = 0.02)]
    pub min_inverse_temperature: f64,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            warmup: self.warmup,
            iterations: self.iterations,
            thin: self.thin,
            seed: self.seed,
            temperatures: self.temperatures,
            min_inverse_temperature: self.min_inverse_temperature,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TwoStepArgs {
    /// Last development period of the body (two-step baseline).
    #[arg(long)]
    pub tau: Option<usize>,
    /// Tail fitting window `lo,hi`: transitions into lo < j <= hi.
    #[arg(long, value_parser = parse_rho)]
    pub rho: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    /// How held-out cells are chosen; without it `fit` uses every cell.
    #[arg(long, value_enum)]
    pub test_mode: Option<TestMode>,
    /// Long-form held-out cells for `--test-mode file`.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub triangle: PathBuf,
    #[arg(long, value_enum, default_value = "hmm")]
    pub variant: VariantArg,
    #[command(flatten)]
    pub two_step: TwoStepArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub test: TestArgs,
    /// Last development period to predict; defaults to the triangle width.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// JSON prior configuration; defaults apply to missing keys.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Repeat for several triangles.
    #[arg(long, required = true)]
    pub triangle: Vec<PathBuf>,
    /// Repeat for each model to compare (at least two).
    #[arg(long, value_enum, required = true)]
    pub variant: Vec<VariantArg>,
    #[command(flatten)]
    pub two_step: TwoStepArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// How held-out cells are chosen.
    #[arg(long, value_enum, default_value = "lower-diagonal")]
    pub test_mode: TestMode,
    /// Long-form held-out cells, one file per triangle, for `--test-mode file`.
    #[arg(long)]
    pub test: Vec<PathBuf>,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "hmm")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub y_initial: f64,
    /// JSON prior configuration; defaults to the calibration priors.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SbcArgs {
    #[arg(long, value_enum, default_value = "hmm")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Keep every k-th posterior draw for ranking.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Metropolis transitions per retained draw.
    #[arg(long, default_value_t = 10)]
    pub sampler_thin: usize,
    #[arg(long, default_value_t = 6)]
    pub temperatures: usize,
    #[arg(long, default_value_t = 0.02)]
    pub min_inverse_temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub y_initial: f64,
    /// JSON prior configuration; defaults to the calibration priors.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LinkRatioArgs {
    /// Repeat for several triangles.
    #[arg(long, required = true)]
    pub triangle: Vec<PathBuf>,
    /// Group label per triangle, in order; defaults to the file stem.
    #[arg(long)]
    pub group: Vec<String>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvertArgs {
    /// Wide matrix: one line per experience period.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
}

/// Parses arguments, runs the command and reports errors on stderr.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::VALIDATION } else { exit::OK };
        }
    };
    match run_command(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_command(command: &Command) -> Result<i32> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sbc(a) => cmd_sbc(a),
        Command::LinkRatios(a) => cmd_link_ratios(a),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn run_record<A: Serialize>(command: &str, args: &A, resolved: serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string(&json!({
        "program": "lossdev",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "args": args,
        "resolved": resolved,
    }))?)
}

fn load_priors(path: Option<&Path>, fallback: PriorConfig) -> Result<PriorConfig> {
    let priors = match path {
        None => fallback,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(p, e.to_string()))?
        }
    };
    priors.validate()?;
    Ok(priors)
}

fn resolve_models(variants: &[VariantArg], two_step: &TwoStepArgs, m: usize) -> Result<Vec<ModelSpec>> {
    let wants_two_step = variants.contains(&VariantArg::Twostep);
    if !wants_two_step && (two_step.tau.is_some() || two_step.rho.is_some()) {
        return Err(Error::Validation(
            "--tau and --rho configure the two-step baseline and need --variant twostep".into(),
        ));
    }
    let mut out = Vec::new();
    for &v in variants {
        let spec = match v.hmm() {
            Some(variant) => ModelSpec::Hmm { variant },
            None => {
                let (Some(tau), Some(rho)) = (two_step.tau, two_step.rho) else {
                    return Err(Error::Validation("--variant twostep needs --tau and --rho".into()));
                };
                let config = TwoStepConfig { tau, rho };
                config.validate(m)?;
                ModelSpec::TwoStep { config }
            }
        };
        if out.contains(&spec) {
            return Err(Error::Validation(format!("model {} listed twice", spec.name())));
        }
        out.push(spec);
    }
    Ok(out)
}

fn split(triangle: &Triangle, mode: Option<TestMode>, test: Option<&Path>) -> Result<(Triangle, Vec<Cell>)> {
    match (mode, test) {
        (Some(TestMode::File), Some(p)) => {
            let cells = io::read_cells(p)?;
            triangle.check_test_cells(&cells).map_err(|e| Error::parse(p, e.to_string()))?;
            Ok((triangle.clone(), cells))
        }
        (Some(TestMode::File), None) => Err(Error::Validation("--test-mode file needs --test".into())),
        (_, Some(_)) => Err(Error::Validation("--test is only used with --test-mode file".into())),
        (Some(TestMode::LowerDiagonal), None) => Ok(triangle.split(SplitMode::LowerDiagonal)),
        (Some(TestMode::LastDiagonal), None) => Ok(triangle.split(SplitMode::LastDiagonal)),
        (None, None) => Ok((triangle.clone(), Vec::new())),
    }
}

fn horizon_for(train: &Triangle, test: &[Cell], requested: Option<usize>) -> usize {
    let needed = test.iter().map(|c| c.j).max().unwrap_or(0).max(train.n_development());
    requested.unwrap_or(needed)
}

fn state_name(s: State) -> &'static str {
    s.name()
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let triangle = io::read_triangle(&a.triangle)?;
    let (train, test) = split(&triangle, a.test.test_mode, a.test.test.as_deref())?;
    let model = resolve_models(&[a.variant], &a.two_step, train.n_development())?.remove(0);
    let priors = load_priors(a.priors.as_deref(), PriorConfig::default())?;
    let sampler = a.sampler.config();
    sampler.validate()?;
    let horizon = horizon_for(&train, &test, a.horizon);
    let cap = cap_base(&train, &test);
    let run = run_record(
        "fit",
        a,
        json!({"model": model, "priors": priors, "sampler": sampler, "horizon": horizon, "cap_base": cap}),
    )?;

    let fit = run::fit(model, &train, &priors, &sampler)?;
    let preds = run::predict(&fit, &train, &test, horizon, cap, sampler.seed)?;

    write_draws(&a.out.join("draws.csv"), &run, &fit)?;
    io::write_json(
        &a.out.join("diagnostics.json"),
        &serde_json::from_str::<serde_json::Value>(&run)?,
        &json!({
            "model": model,
            "converged": fit.draws.converged,
            "chains": fit.draws.chains,
            "iterations": fit.draws.iterations,
            "draws": fit.draws.len(),
            "diagnostics": fit.draws.diagnostics,
            "swap_rate": fit.swap_rates,
            "step_scale": fit.step_scales,
        }),
    )?;
    write_states(&a.out.join("states.csv"), &run, &fit, &train, &preds)?;
    write_predictions(&a.out.join("predictions.csv"), &run, &preds)?;
    write_quantiles(&a.out.join("quantiles.csv"), &run, &preds)?;

    if fit.draws.converged {
        Ok(exit::OK)
    } else {
        eprintln!(
            "warning: not converged (max R-hat {:.3}, min ESS {:.1})",
            fit.draws.diagnostics.max_rhat, fit.draws.diagnostics.min_ess
        );
        Ok(exit::NOT_CONVERGED)
    }
}

fn write_draws(path: &Path, run: &str, fit: &Fit) -> Result<()> {
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(fit.draws.parameter_names.iter().cloned());
    header.push("log_density".into());
    let mut t = Table::new(run, header);
    for d in &fit.draws.draws {
        let mut row = vec![d.chain.to_string(), d.iteration.to_string()];
        row.extend(d.natural.iter().map(|&x| num(x)));
        row.push(num(d.log_density));
        t.row(row);
    }
    t.write(path)
}

/// Modal regime per cell: Viterbi shares on training cells (fixed regimes
/// for the two-step baseline), simulated-state shares beyond.
fn write_states(path: &Path, run: &str, fit: &Fit, train: &Triangle, preds: &PredictionSet) -> Result<()> {
    let mut t = Table::new(run, ["i", "j", "source", "p_tail", "modal_state"]);
    let shares = run::viterbi_tail_share(fit, train);
    let modal = |p: f64| if p > 0.5 { State::Tail } else { State::Body };
    for (ii, row) in train.rows().iter().enumerate() {
        for jj in 0..row.len() {
            let (source, p) = match (&shares, fit.model) {
                (Some(s), _) => ("viterbi", s[ii][jj]),
                (None, ModelSpec::TwoStep { config }) => ("fixed", if jj + 1 > config.tau { 1.0 } else { 0.0 }),
                (None, ModelSpec::Hmm { .. }) => unreachable!("hidden Markov fits always decode"),
            };
            t.row([(ii + 1).to_string(), (jj + 1).to_string(), source.into(), num(p), state_name(modal(p)).into()]);
        }
    }
    for c in &preds.cells {
        let p = c.states.iter().filter(|&&s| s == State::Tail).count() as f64 / c.states.len().max(1) as f64;
        t.row([c.i.to_string(), c.j.to_string(), "predictive".into(), num(p), state_name(modal(p)).into()]);
    }
    t.write(path)
}

fn write_predictions(path: &Path, run: &str, preds: &PredictionSet) -> Result<()> {
    let mut t = Table::new(run, ["i", "j", "draw", "y_hat", "state", "log_density"]);
    for c in &preds.cells {
        for (s, (&y, &z)) in c.samples.iter().zip(&c.states).enumerate() {
            let ld = c.log_densities.as_ref().map_or(String::new(), |d| num(d[s]));
            t.row([c.i.to_string(), c.j.to_string(), s.to_string(), num(y), state_name(z).into(), ld]);
        }
    }
    t.write(path)
}

fn write_quantiles(path: &Path, run: &str, preds: &PredictionSet) -> Result<()> {
    let mut t = Table::new(run, ["i", "j", "q025", "q25", "q50", "q75", "q975"]);
    for r in fan_quantiles(preds) {
        let mut row = vec![r.i.to_string(), r.j.to_string()];
        row.extend(r.quantiles.iter().map(|&q| num(q)));
        t.row(row);
    }
    t.write(path)
}

fn triangle_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(k, s)| if stems.iter().filter(|t| *t == s).count() > 1 { paths[k].display().to_string() } else { s.clone() })
        .collect()
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    if a.variant.len() < 2 {
        return Err(Error::Validation("evaluate compares at least two models; repeat --variant".into()));
    }
    match a.test_mode {
        TestMode::File if a.test.len() != a.triangle.len() => {
            return Err(Error::Validation(format!(
                "--test-mode file needs one --test per --triangle ({} vs {})",
                a.test.len(),
                a.triangle.len()
            )))
        }
        TestMode::File => {}
        _ if !a.test.is_empty() => {
            return Err(Error::Validation("--test is only used with --test-mode file".into()))
        }
        _ => {}
    }
    let names = triangle_names(&a.triangle);
    let priors = load_priors(a.priors.as_deref(), PriorConfig::default())?;
    let sampler = a.sampler.config();
    sampler.validate()?;

    let mut data = Vec::new();
    for (k, path) in a.triangle.iter().enumerate() {
        let triangle = io::read_triangle(path)?;
        let (train, test) = split(&triangle, Some(a.test_mode), a.test.get(k).map(PathBuf::as_path))?;
        if test.is_empty() {
            return Err(Error::Validation(format!("triangle {} has no held-out cells to score", names[k])));
        }
        let models = resolve_models(&a.variant, &a.two_step, train.n_development())?;
        data.push((train, test, models));
    }
    let run = run_record(
        "evaluate",
        a,
        json!({
            "triangles": names,
            "models": data[0].2,
            "priors": priors,
            "sampler": sampler,
        }),
    )?;

    let mut scores = Vec::new();
    let mut fits = Vec::new();
    for (name, (train, test, models)) in names.iter().zip(&data) {
        let horizon = horizon_for(train, test, None);
        let cap = cap_base(train, test);
        for &model in models {
            let fit = run::fit(model, train, &priors, &sampler)?;
            let preds = run::predict(&fit, train, test, horizon, cap, sampler.seed)?;
            fits.push(json!({
                "triangle": name,
                "model": model.name(),
                "converged": fit.draws.converged,
                "max_rhat": fit.draws.diagnostics.max_rhat,
                "min_ess": fit.draws.diagnostics.min_ess,
            }));
            scores.push(TriangleScore::from_predictions(name, model.name(), &preds)?);
        }
    }
    let report = ScoreReport::build(scores)?;
    let all_converged = fits.iter().all(|f| f["converged"] == json!(true));

    let mut pit = Table::new(&run, ["triangle", "model", "i", "j", "pit"]);
    for s in &report.triangles {
        for (&(i, j), &p) in s.cells.iter().zip(&s.cell_pit) {
            pit.row([s.triangle.clone(), s.model.clone(), i.to_string(), j.to_string(), num(p)]);
        }
    }
    let run_value: serde_json::Value = serde_json::from_str(&run)?;
    io::write_json(&a.out.join("score_report.json"), &run_value, &json!({ "fits": fits, "report": report }))?;
    pit.write(&a.out.join("pit.csv"))?;
    Ok(if all_converged { exit::OK } else { exit::NOT_CONVERGED })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let Some(variant) = a.variant.hmm() else {
        return Err(Error::Validation("simulate draws from the hidden Markov models only".into()));
    };
    let priors = load_priors(a.priors.as_deref(), PriorConfig::calibration())?;
    let run = run_record("simulate", a, json!({ "priors": priors }))?;
    let mut regenerations = 0;
    let sim = loop {
        let s = if regenerations == 0 { a.seed } else { rng::derive_seed(a.seed, tags::REGENERATE, regenerations as u64) };
        match simulate_prior_predictive(variant, a.n, a.m, &priors, s, a.y_initial) {
            Ok(sim) => break sim,
            Err(SimulationError::Overflow { .. }) if regenerations + 1 < MAX_REGENERATIONS => regenerations += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let cells: Vec<Cell> = sim.triangle.cells().collect();
    io::cells_table(&run, &cells).write(&a.out.join("triangle.csv"))?;
    let mut states = Table::new(&run, ["i", "j", "state"]);
    for (ii, row) in sim.states.iter().enumerate() {
        for (jj, &z) in row.iter().enumerate() {
            states.row([(ii + 1).to_string(), (jj + 1).to_string(), state_name(z).to_string()]);
        }
    }
    states.write(&a.out.join("states.csv"))?;
    let layout = ParamLayout::new(variant, a.m);
    let run_value: serde_json::Value = serde_json::from_str(&run)?;
    io::write_json(
        &a.out.join("theta.json"),
        &run_value,
        &json!({
            "variant": variant,
            "regenerations": regenerations,
            "parameters": named(layout.natural_names(), &layout.natural_values(&sim.theta)),
            "unconstrained": named(layout.unconstrained_names(), &sim.unconstrained),
            "theta": sim.theta,
        }),
    )?;
    Ok(exit::OK)
}

fn named(names: Vec<String>, values: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    names.into_iter().zip(values.iter().map(|&x| json!(x))).collect()
}

fn cmd_sbc(a: &SbcArgs) -> Result<i32> {
    let Some(variant) = a.variant.hmm() else {
        return Err(Error::Validation("calibration runs on the hidden Markov models only".into()));
    };
    let priors = load_priors(a.priors.as_deref(), PriorConfig::calibration())?;
    let cfg = SbcConfig {
        variant,
        n: a.n,
        m: a.m,
        priors,
        replications: a.replications,
        sampler: SamplerConfig {
            chains: a.chains,
            warmup: a.warmup,
            iterations: a.iterations,
            thin: a.sampler_thin,
            seed: a.seed,
            temperatures: a.temperatures,
            min_inverse_temperature: a.min_inverse_temperature,
        },
        thin: a.thin,
        bins: a.bins,
        seed: a.seed,
        y_initial: a.y_initial,
    };
    cfg.validate()?;
    let run = run_record("sbc", a, json!({ "config": cfg }))?;
    let report = run::sbc(&cfg, &PosteriorFitter)?;

    let chi = report.chi_square_statistics();
    let in_band = report.bins_in_band();
    let summary: Vec<serde_json::Value> = report
        .quantities
        .iter()
        .enumerate()
        .map(|(q, name)| {
            json!({
                "quantity": name,
                "chi_square": chi[q],
                "p_value": if report.kept > 0 { json!(stats::chi_square_p_value(chi[q], cfg.bins - 1)) } else { json!(null) },
                "bins_in_band": in_band[q],
            })
        })
        .collect();
    let mut ranks = Table::new(&run, ["replication", "quantity", "rank", "converged"]);
    for r in &report.replications {
        for (q, name) in report.quantities.iter().enumerate() {
            let rank = r.ranks.get(q).map_or(String::new(), |x| x.to_string());
            ranks.row([r.replication.to_string(), name.clone(), rank, r.converged.to_string()]);
        }
    }
    let run_value: serde_json::Value = serde_json::from_str(&run)?;
    io::write_json(&a.out.join("sbc_report.json"), &run_value, &json!({ "uniformity": summary, "report": report }))?;
    ranks.write(&a.out.join("ranks.csv"))?;
    Ok(exit::OK)
}

fn cmd_link_ratios(a: &LinkRatioArgs) -> Result<i32> {
    if !a.group.is_empty() && a.group.len() != a.triangle.len() {
        return Err(Error::Validation(format!(
            "--group must be given once per --triangle ({} vs {})",
            a.group.len(),
            a.triangle.len()
        )));
    }
    let labels = if a.group.is_empty() { triangle_names(&a.triangle) } else { a.group.clone() };
    let triangles = a.triangle.iter().map(|p| io::read_triangle(p)).collect::<Result<Vec<_>>>()?;
    let run = run_record("link-ratios", a, json!({ "groups": labels }))?;
    let summary = summarize_link_ratios(labels.iter().map(String::as_str).zip(&triangles));
    let mut t = Table::new(&run, ["group", "transition", "mean", "sd", "count"]);
    for s in summary {
        t.row([s.group, s.transition.to_string(), num(s.mean), num(s.sd), s.count.to_string()]);
    }
    t.write(&a.out.join("link_ratios.csv"))?;
    Ok(exit::OK)
}

fn cmd_convert(a: &ConvertArgs) -> Result<i32> {
    let triangle = io::read_wide(&a.input)?;
    let run = run_record("convert", a, json!({}))?;
    let cells: Vec<Cell> = triangle.cells().collect();
    io::cells_table(&run, &cells).write(&a.output)?;
    Ok(exit::OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step(tau: Option<usize>, rho: Option<(usize, usize)>) -> TwoStepArgs {
        TwoStepArgs { tau, rho }
    }

    #[test]
    fn rho_parsing() {
        assert_eq!(parse_rho("6,10"), Ok((6, 10)));
        assert_eq!(parse_rho(" 6 , 10 "), Ok((6, 10)));
        assert!(parse_rho("6").is_err());
        assert!(parse_rho("a,b").is_err());
    }

    #[test]
    fn tau_without_two_step_is_rejected() {
        let err = resolve_models(&[VariantArg::Hmm], &two_step(Some(6), None), 10).unwrap_err();
        assert_eq!(err.exit_code(), exit::VALIDATION);
        assert!(resolve_models(&[VariantArg::Twostep], &two_step(Some(6), None), 10).is_err());
        let ok = resolve_models(&[VariantArg::Hmm, VariantArg::Twostep], &two_step(Some(6), Some((6, 10))), 10).unwrap();
        assert_eq!(ok[1], ModelSpec::TwoStep { config: TwoStepConfig { tau: 6, rho: (6, 10) } });
        assert!(resolve_models(&[VariantArg::Hmm, VariantArg::Hmm], &two_step(None, None), 10).is_err());
        let bad_tau = resolve_models(&[VariantArg::Twostep], &two_step(Some(11), Some((6, 10))), 10).unwrap_err();
        assert_eq!(bad_tau.exit_code(), exit::VALIDATION);
    }

    #[test]
    fn duplicate_stems_fall_back_to_paths() {
        let names = triangle_names(&[PathBuf::from("a/x.csv"), PathBuf::from("b/x.csv"), PathBuf::from("y.csv")]);
        assert_eq!(names, vec!["a/x.csv", "b/x.csv", "y"]);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
