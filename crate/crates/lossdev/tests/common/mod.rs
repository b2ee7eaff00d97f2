//! Brute-force reference computations shared by the integration tests.
//! Nothing here calls the library's density or transition code.
#![allow(dead_code)]

use std::path::Path;

use lossdev_core::model::{EmissionParams, ParameterDraw, State, TransitionParams, Variant};
use proptest::prelude::*;

/// Transition dimension used for generated cases: rows of up to six cells.
pub const M: usize = 6;

#[derive(Debug, Clone)]
pub struct Case {
    pub variant: Variant,
    pub theta: ParameterDraw,
    pub row: Vec<f64>,
}

fn ln_normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Log density of `y` given `y_prev` when period `j` is in `state`,
/// written straight from the model definition.
pub fn emission(theta: &ParameterDraw, state: State, j: usize, y: f64, y_prev: f64) -> f64 {
    let e = &theta.emission;
    let var = y_prev * (e.gamma1 + e.gamma2 * j as f64).exp();
    let factor = match state {
        State::Body => e.alpha[j - 2],
        State::Tail => e.omega.powf(e.beta.powi(j as i32)),
    };
    let mu = (factor * y_prev).ln();
    ln_normal_pdf(y.ln(), mu, var.sqrt()) - y.ln()
}

/// Log probability of moving from `from` into `to` on entering period `j`.
pub fn transition(theta: &ParameterDraw, variant: Variant, j: usize, from: State, to: State) -> f64 {
    let t = &theta.transition;
    let pi = match variant {
        Variant::HmmLag => t.pi[j - 2],
        _ => t.pi[0],
    };
    let nu = if variant == Variant::HmmNu { t.nu } else { 0.0 };
    let p = match (from, to) {
        (State::Body, State::Body) => pi,
        (State::Body, State::Tail) => 1.0 - pi,
        (State::Tail, State::Body) => nu,
        (State::Tail, State::Tail) => 1.0 - nu,
    };
    p.ln()
}

/// Joint log density of a row and a state path starting in the body.
pub fn path_score(case: &Case, path: &[State]) -> f64 {
    assert_eq!(path[0], State::Body);
    let mut s = 0.0;
    for j in 2..=case.row.len() {
        s += transition(&case.theta, case.variant, j, path[j - 2], path[j - 1]);
        s += emission(&case.theta, path[j - 1], j, case.row[j - 1], case.row[j - 2]);
    }
    s
}

pub fn all_paths(len: usize) -> Vec<Vec<State>> {
    (0..1usize << (len - 1))
        .map(|bits| {
            std::iter::once(State::Body)
                .chain((0..len - 1).map(|k| if bits >> k & 1 == 1 { State::Tail } else { State::Body }))
                .collect()
        })
        .collect()
}

pub struct Enumeration {
    pub log_likelihood: f64,
    pub best: Vec<State>,
    pub best_score: f64,
}

/// Sums over every state path. Among paths whose score is within `1e-12`
/// of the best, the one preferring the body at the latest differing
/// period wins, matching backtracking that favours the body on ties.
pub fn enumerate(case: &Case) -> Enumeration {
    let scored: Vec<(Vec<State>, f64)> = all_paths(case.row.len()).into_iter().map(|p| {
        let s = path_score(case, &p);
        (p, s)
    }).collect();
    let max = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let log_likelihood = max + scored.iter().map(|(_, s)| (s - max).exp()).sum::<f64>().ln();
    let (best, best_score) = scored
        .iter()
        .filter(|(_, s)| *s >= max - 1e-12)
        .min_by(|a, b| {
            let key = |p: &Vec<State>| p.iter().rev().map(|s| s.index()).collect::<Vec<_>>();
            key(&a.0).cmp(&key(&b.0))
        })
        .cloned()
        .expect("at least one finite path");
    Enumeration { log_likelihood, best, best_score }
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Hmm), Just(Variant::HmmNu), Just(Variant::HmmLag)]
}

/// Random variant, parameters and a row of 2 to 6 cumulative losses.
pub fn case_strategy() -> impl Strategy<Value = Case> {
    (
        variant_strategy(),
        prop::collection::vec(0.6f64..2.5, M - 1),
        1.0f64..2.5,
        0.05f64..0.95,
        -6.0f64..0.5,
        -1.0f64..0.3,
        prop::collection::vec(0.02f64..0.98, M - 1),
        0.01f64..0.99,
        0.5f64..200.0,
        prop::collection::vec(0.9f64..2.5, 1..M),
    )
        .prop_map(|(variant, alpha, omega, beta, gamma1, gamma2, mut pis, nu, y1, growth)| {
            pis.sort_by(|a, b| b.total_cmp(a));
            let pi = if variant == Variant::HmmLag { pis } else { vec![pis[0]] };
            let nu = if variant == Variant::HmmNu { nu } else { 0.0 };
            let mut row = vec![y1];
            for g in growth {
                row.push(row.last().unwrap() * g);
            }
            Case {
                variant,
                theta: ParameterDraw {
                    emission: EmissionParams { alpha, omega, beta, gamma1, gamma2 },
                    transition: TransitionParams { pi, nu },
                },
                row,
            }
        })
}

/// Deterministic cases drawn from [`case_strategy`].
pub fn fixed_cases(n: usize) -> Vec<Case> {
    use proptest::strategy::ValueTree;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let s = case_strategy();
    (0..n).map(|_| s.new_tree(&mut runner).expect("strategy").current()).collect()
}

/// Writes a long-form triangle file from rows.
pub fn write_long(path: &Path, rows: &[Vec<f64>]) {
    let mut text = String::from("experience_period,development_period,cumulative_loss\n");
    for (i, r) in rows.iter().enumerate() {
        for (j, y) in r.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", i + 1, j + 1, y));
        }
    }
    std::fs::write(path, text).unwrap();
}
