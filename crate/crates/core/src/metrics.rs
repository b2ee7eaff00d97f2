//! Out-of-sample scores: ELPD from one-step densities, RMSE from capped
//! trajectories, paired model differences with standard errors, and PIT
//! values.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{ln, log_sum_exp, sqrt};
use crate::predict::PredictionSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("non-finite log density in cell {cell}")]
    NonFinite { cell: usize },
    #[error("cell {cell} has no draws")]
    Empty { cell: usize },
    #[error("score vectors differ in length ({a} vs {b})")]
    Mismatch { a: usize, b: usize },
    #[error("prediction sets cover different test cells")]
    DifferentCells,
    #[error("nothing to combine")]
    NoTriangles,
}

/// Log of the posterior-mean density of one cell.
pub fn cell_elpd(log_densities: &[f64]) -> f64 {
    log_sum_exp(log_densities) - ln(log_densities.len() as f64)
}

/// Sum over cells of `log(mean_s exp(log_density))`.
pub fn elpd(cells: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for (c, d) in cells.iter().enumerate() {
        if d.is_empty() {
            return Err(MetricsError::Empty { cell: c });
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite { cell: c });
        }
        total += cell_elpd(d);
    }
    Ok(total)
}

pub fn rmse_cell(samples: &[f64], truth: f64) -> f64 {
    let mse = samples.iter().map(|y| (y - truth) * (y - truth)).sum::<f64>() / samples.len() as f64;
    sqrt(mse)
}

/// Fraction of samples at or below the truth.
pub fn pit(samples: &[f64], truth: f64) -> f64 {
    samples.iter().filter(|&&y| y <= truth).count() as f64 / samples.len() as f64
}

/// How pointwise differences aggregate into a model difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Mean,
}

/// A model difference with its standard error; `se` is `None` for fewer
/// than two points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub diff: f64,
    pub se: Option<f64>,
    pub n: usize,
}

/// Difference of pointwise scores `a - b` with
/// `se = sqrt(n * var(a - b))`, the variance using `n - 1`.
pub fn score_difference(a: &[f64], b: &[f64], aggregate: Aggregate) -> Result<Difference, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Mismatch { a: a.len(), b: b.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let sum: f64 = d.iter().sum();
    let diff = match aggregate {
        Aggregate::Sum => sum,
        Aggregate::Mean if n > 0 => sum / n as f64,
        Aggregate::Mean => 0.0,
    };
    let se = (n >= 2).then(|| {
        let mean = sum / n as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        sqrt(var * n as f64)
    });
    Ok(Difference { diff, se, n })
}

/// Mean difference and mean standard error across triangles, with the
/// interval `mean_diff +/- 2 mean_se`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub mean_diff: f64,
    pub mean_se: f64,
    pub interval: (f64, f64),
    pub n_triangles: usize,
}

pub fn combine_triangles(diffs: &[f64], ses: &[f64]) -> Result<Combined, MetricsError> {
    if diffs.is_empty() {
        return Err(MetricsError::NoTriangles);
    }
    if diffs.len() != ses.len() {
        return Err(MetricsError::Mismatch { a: diffs.len(), b: ses.len() });
    }
    let n = diffs.len() as f64;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let mean_se = ses.iter().sum::<f64>() / n;
    Ok(Combined {
        mean_diff,
        mean_se,
        interval: (mean_diff - 2.0 * mean_se, mean_diff + 2.0 * mean_se),
        n_triangles: diffs.len(),
    })
}

/// Scores of one model on one triangle's test cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleScore {
    pub triangle: String,
    pub model: String,
    pub elpd: f64,
    /// `(i, j)` of each scored cell.
    pub cells: Vec<(usize, usize)>,
    pub cell_elpd: Vec<f64>,
    pub cell_rmse: Vec<f64>,
    pub cell_pit: Vec<f64>,
}

impl TriangleScore {
    pub fn from_predictions(triangle: &str, model: &str, set: &PredictionSet) -> Result<Self, MetricsError> {
        let mut cells = Vec::new();
        let mut dens = Vec::new();
        let mut cell_rmse = Vec::new();
        let mut cell_pit = Vec::new();
        for c in set.scored_cells() {
            let truth = c.observed.expect("scored cells carry observations");
            cells.push((c.i, c.j));
            dens.push(c.log_densities.clone().expect("scored cells carry densities"));
            cell_rmse.push(rmse_cell(&c.samples, truth));
            cell_pit.push(pit(&c.samples, truth));
        }
        let elpd = elpd(&dens)?;
        Ok(Self {
            triangle: triangle.into(),
            model: model.into(),
            elpd,
            cells,
            cell_elpd: dens.iter().map(|d| cell_elpd(d)).collect(),
            cell_rmse,
            cell_pit,
        })
    }

    pub fn mean_rmse(&self) -> f64 {
        if self.cell_rmse.is_empty() {
            return 0.0;
        }
        self.cell_rmse.iter().sum::<f64>() / self.cell_rmse.len() as f64
    }
}

/// Model `a` minus model `b` on one triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub triangle: String,
    pub model_a: String,
    pub model_b: String,
    pub elpd: Difference,
    pub rmse: Difference,
}

pub fn compare(a: &TriangleScore, b: &TriangleScore) -> Result<PairScore, MetricsError> {
    if a.cells != b.cells {
        return Err(MetricsError::DifferentCells);
    }
    Ok(PairScore {
        triangle: a.triangle.clone(),
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        elpd: score_difference(&a.cell_elpd, &b.cell_elpd, Aggregate::Sum)?,
        rmse: score_difference(&a.cell_rmse, &b.cell_rmse, Aggregate::Mean)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPair {
    pub model_a: String,
    pub model_b: String,
    pub elpd: Combined,
    pub rmse: Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub triangles: Vec<TriangleScore>,
    pub pairs: Vec<PairScore>,
    pub combined: Vec<CombinedPair>,
}

impl ScoreReport {
    /// Scores every model on every triangle, compares each ordered pair of
    /// distinct models (first-listed model as `a`), and combines pairs over
    /// triangles. Undefined standard errors count as zero in the combination.
    pub fn build(scores: Vec<TriangleScore>) -> Result<Self, MetricsError> {
        let mut models: Vec<String> = Vec::new();
        let mut triangles: Vec<String> = Vec::new();
        for s in &scores {
            if !models.contains(&s.model) {
                models.push(s.model.clone());
            }
            if !triangles.contains(&s.triangle) {
                triangles.push(s.triangle.clone());
            }
        }
        let find = |t: &str, m: &str| scores.iter().find(|s| s.triangle == t && s.model == m);
        let mut pairs = Vec::new();
        let mut combined = Vec::new();
        for (ia, ma) in models.iter().enumerate() {
            for mb in &models[ia + 1..] {
                let mut these = Vec::new();
                for t in &triangles {
                    if let (Some(a), Some(b)) = (find(t, ma), find(t, mb)) {
                        these.push(compare(a, b)?);
                    }
                }
                if these.is_empty() {
                    continue;
                }
                let col = |f: &dyn Fn(&PairScore) -> f64| these.iter().map(f).collect::<Vec<f64>>();
                combined.push(CombinedPair {
                    model_a: ma.clone(),
                    model_b: mb.clone(),
                    elpd: combine_triangles(&col(&|p| p.elpd.diff), &col(&|p| p.elpd.se.unwrap_or(0.0)))?,
                    rmse: combine_triangles(&col(&|p| p.rmse.diff), &col(&|p| p.rmse.se.unwrap_or(0.0)))?,
                });
                pairs.extend(these);
            }
        }
        Ok(Self { triangles: scores, pairs, combined })
    }
}
