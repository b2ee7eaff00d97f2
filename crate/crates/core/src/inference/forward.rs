use alloc::vec::Vec;

use super::InferenceError;
use crate::math::{ln, log_sum_exp2};
use crate::model::{transition_matrix, EmissionTable, ParameterDraw, State, Variant};
use crate::triangle::Triangle;

/// Log forward probabilities of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowForward {
    /// `log_forward[j - 1][k] = ln p(z_j = k, y_1..y_j)`, with `y_1` treated
    /// as given.
    pub log_forward: Vec<[f64; 2]>,
    pub log_likelihood: f64,
}

impl RowForward {
    /// Distribution of the last observed state given the row.
    pub fn filtered_last(&self) -> [f64; 2] {
        normalise(*self.log_forward.last().expect("rows are non-empty"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub total_log_likelihood: f64,
    pub rows: Vec<RowForward>,
}

pub(crate) fn normalise(log_f: [f64; 2]) -> [f64; 2] {
    let z = log_sum_exp2(log_f[0], log_f[1]);
    let p0 = crate::math::exp(log_f[0] - z);
    let p1 = crate::math::exp(log_f[1] - z);
    let s = p0 + p1;
    [p0 / s, p1 / s]
}

/// Emission table plus log transition matrices for one parameter draw.
#[derive(Debug, Clone)]
pub struct FilterKernel {
    table: EmissionTable,
    // log_trans[d] for transition d into period d + 1; index 0 unused.
    log_trans: Vec<[[f64; 2]; 2]>,
}

impl FilterKernel {
    pub fn new(theta: &ParameterDraw, variant: Variant, horizon: usize) -> Self {
        let table = EmissionTable::new(&theta.emission, horizon);
        Self::with_table(table, theta, variant)
    }

    pub fn with_table(table: EmissionTable, theta: &ParameterDraw, variant: Variant) -> Self {
        let horizon = table.horizon();
        let mut log_trans = alloc::vec![[[0.0; 2]; 2]; horizon.max(1)];
        for (d, slot) in log_trans.iter_mut().enumerate().skip(1) {
            let t = transition_matrix(variant, &theta.transition, d);
            *slot = [[ln(t[0][0]), ln(t[0][1])], [ln(t[1][0]), ln(t[1][1])]];
        }
        Self { table, log_trans }
    }

    /// Kernel whose regime is a deterministic function of the period: body
    /// for transitions into `j <= tau`, tail afterwards.
    pub fn fixed_regime(table: EmissionTable, tau: usize) -> Self {
        let horizon = table.horizon();
        let ninf = f64::NEG_INFINITY;
        let mut log_trans = alloc::vec![[[0.0; 2]; 2]; horizon.max(1)];
        for (d, slot) in log_trans.iter_mut().enumerate().skip(1) {
            *slot = if d < tau { [[0.0, ninf], [0.0, ninf]] } else { [[ninf, 0.0], [ninf, 0.0]] };
        }
        Self { table, log_trans }
    }

    pub fn table(&self) -> &EmissionTable {
        &self.table
    }

    pub fn horizon(&self) -> usize {
        self.table.horizon()
    }

    /// Log transition probabilities into period `j` from each state.
    pub fn log_transition(&self, j: usize) -> [[f64; 2]; 2] {
        self.log_trans[j - 1]
    }

    /// Transition probabilities into period `j` from each state.
    pub fn transition_probs(&self, j: usize) -> [[f64; 2]; 2] {
        let lt = self.log_trans[j - 1];
        let e = crate::math::exp;
        [[e(lt[0][0]), e(lt[0][1])], [e(lt[1][0]), e(lt[1][1])]]
    }

    /// Initial log forward values at `j = 1`: the chain starts in the body.
    pub fn initial() -> [f64; 2] {
        [0.0, f64::NEG_INFINITY]
    }

    /// One forward recursion step into period `j`.
    #[inline]
    pub fn step(&self, prev: [f64; 2], j: usize, ln_y: f64, ln_y_prev: f64) -> [f64; 2] {
        let lt = &self.log_trans[j - 1];
        let mut next = [0.0; 2];
        for k in 0..2 {
            let pred = log_sum_exp2(prev[0] + lt[0][k], prev[1] + lt[1][k]);
            next[k] = if pred == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                pred + self.table.log_density(State::from_index(k), j, ln_y, ln_y_prev)
            };
        }
        next
    }

    /// Marginal log-likelihood of a row of log losses.
    pub fn row_log_likelihood(&self, ln_row: &[f64]) -> f64 {
        let mut f = Self::initial();
        for j in 2..=ln_row.len() {
            f = self.step(f, j, ln_row[j - 1], ln_row[j - 2]);
        }
        log_sum_exp2(f[0], f[1])
    }

    /// Full forward pass storing every step.
    pub fn row_forward(&self, ln_row: &[f64]) -> RowForward {
        let mut log_forward = Vec::with_capacity(ln_row.len());
        log_forward.push(Self::initial());
        for j in 2..=ln_row.len() {
            let prev = log_forward[j - 2];
            log_forward.push(self.step(prev, j, ln_row[j - 1], ln_row[j - 2]));
        }
        let last = log_forward[ln_row.len() - 1];
        RowForward { log_forward, log_likelihood: log_sum_exp2(last[0], last[1]) }
    }
}

/// Forward algorithm over every row of `train`. Rows with a single cell
/// contribute zero.
pub fn forward_log_likelihood(
    train: &Triangle,
    theta: &ParameterDraw,
    variant: Variant,
) -> Result<ForwardResult, InferenceError> {
    let horizon = train.n_development().max(train.rows().iter().map(Vec::len).max().unwrap_or(0));
    let kernel = FilterKernel::new(theta, variant, horizon);
    let mut rows = Vec::with_capacity(train.n_experience());
    let mut total = 0.0;
    for (ii, row) in train.rows().iter().enumerate() {
        let ln_row: Vec<f64> = row.iter().map(|&y| ln(y)).collect();
        let rf = kernel.row_forward(&ln_row);
        if let Some(jj) = rf
            .log_forward
            .iter()
            .position(|f| f.iter().any(|v| v.is_nan() || *v == f64::INFINITY) || log_sum_exp2(f[0], f[1]) == f64::NEG_INFINITY)
        {
            return Err(InferenceError::NonFinite { i: ii + 1, j: jj + 1 });
        }
        total += rf.log_likelihood;
        rows.push(rf);
    }
    Ok(ForwardResult { total_log_likelihood: total, rows })
}
