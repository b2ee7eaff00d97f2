use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::forward::FilterKernel;
use crate::math::ln;
use crate::model::{ParameterDraw, State, Variant};
use crate::triangle::Triangle;

// Log scores within this distance count as tied and resolve toward the body.
const TIE: f64 = 1e-12;

/// Most likely latent path per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    pub rows: Vec<Vec<State>>,
    /// Joint log density of each row's path and losses.
    pub log_scores: Vec<f64>,
}

fn better(body: f64, tail: f64) -> State {
    if tail > body + TIE {
        State::Tail
    } else {
        State::Body
    }
}

pub(crate) fn viterbi_with_kernel(kernel: &FilterKernel, ln_row: &[f64]) -> (Vec<State>, f64) {
    let n = ln_row.len();
    let mut delta = [0.0, f64::NEG_INFINITY];
    let mut back: Vec<[State; 2]> = Vec::with_capacity(n);
    back.push([State::Body; 2]);
    for j in 2..=n {
        let lt = kernel.log_transition(j);
        let mut next = [0.0; 2];
        let mut ptr = [State::Body; 2];
        for k in 0..2 {
            let via_body = delta[0] + lt[0][k];
            let via_tail = delta[1] + lt[1][k];
            let from = better(via_body, via_tail);
            let best = if from == State::Body { via_body } else { via_tail };
            ptr[k] = from;
            next[k] = if best == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                best + kernel.table().log_density(State::from_index(k), j, ln_row[j - 1], ln_row[j - 2])
            };
        }
        back.push(ptr);
        delta = next;
    }
    let last = better(delta[0], delta[1]);
    let score = delta[last.index()];
    let mut path = alloc::vec![State::Body; n];
    path[n - 1] = last;
    for j in (1..n).rev() {
        path[j - 1] = back[j][path[j].index()];
    }
    (path, score)
}

/// Viterbi path and its joint log score for a single row of losses.
pub fn viterbi_row(row: &[f64], theta: &ParameterDraw, variant: Variant) -> (Vec<State>, f64) {
    let kernel = FilterKernel::new(theta, variant, row.len().max(2));
    let ln_row: Vec<f64> = row.iter().map(|&y| ln(y)).collect();
    viterbi_with_kernel(&kernel, &ln_row)
}

pub fn viterbi(train: &Triangle, theta: &ParameterDraw, variant: Variant) -> StatePath {
    let horizon = train.n_development().max(train.rows().iter().map(Vec::len).max().unwrap_or(0));
    let kernel = FilterKernel::new(theta, variant, horizon);
    let (rows, log_scores) = train
        .rows()
        .iter()
        .map(|row| {
            let ln_row: Vec<f64> = row.iter().map(|&y| ln(y)).collect();
            viterbi_with_kernel(&kernel, &ln_row)
        })
        .unzip();
    StatePath { rows, log_scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmissionParams, TransitionParams};
    use alloc::vec;

    fn theta(pi: f64) -> ParameterDraw {
        ParameterDraw {
            emission: EmissionParams { alpha: vec![1.5, 1.2, 1.1, 1.05], omega: 1.2, beta: 0.6, gamma1: -3.0, gamma2: -0.2 },
            transition: TransitionParams { pi: vec![pi], nu: 0.0 },
        }
    }

    #[test]
    fn pinned_transitions() {
        let row = [1.0, 1.4, 1.7, 1.9, 2.0];
        let (path, _) = viterbi_row(&row, &theta(1.0), Variant::Hmm);
        assert!(path.iter().all(|&s| s == State::Body));
        let (path, _) = viterbi_row(&row, &theta(0.0), Variant::Hmm);
        assert_eq!(path[0], State::Body);
        assert!(path[1..].iter().all(|&s| s == State::Tail));
    }

    #[test]
    fn single_cell_row() {
        let (path, score) = viterbi_row(&[3.0], &theta(0.5), Variant::Hmm);
        assert_eq!(path, vec![State::Body]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn path_score_never_exceeds_marginal() {
        let t = Triangle::from_rows(vec![vec![1.0, 1.5, 1.8, 1.98, 2.0], vec![1.0, 1.3, 1.5]], 5).unwrap();
        let th = theta(0.7);
        let vp = viterbi(&t, &th, Variant::Hmm);
        let fw = super::super::forward_log_likelihood(&t, &th, Variant::Hmm).unwrap();
        for (score, row) in vp.log_scores.iter().zip(&fw.rows) {
            assert!(*score <= row.log_likelihood + 1e-12);
        }
        for path in &vp.rows {
            assert!(path.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
