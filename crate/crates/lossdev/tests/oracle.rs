mod common;

use common::{case_strategy, enumerate, path_score, Case, M};
use lossdev_core::inference::{forward_log_likelihood, viterbi, viterbi_row};
use lossdev_core::model::{State, Variant};
use lossdev_core::Triangle;
use proptest::prelude::*;

fn triangle_of(case: &Case) -> Triangle {
    Triangle::from_rows(vec![case.row.clone(), vec![case.row[0]]], M).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn forward_matches_path_enumeration(case in case_strategy()) {
        let e = enumerate(&case);
        let f = forward_log_likelihood(&triangle_of(&case), &case.theta, case.variant).unwrap();
        prop_assert!((f.total_log_likelihood - e.log_likelihood).abs() < 1e-10,
            "forward {} vs enumeration {}", f.total_log_likelihood, e.log_likelihood);
    }

    #[test]
    fn viterbi_matches_enumeration_argmax(case in case_strategy()) {
        let e = enumerate(&case);
        let (path, score) = viterbi_row(&case.row, &case.theta, case.variant);
        prop_assert_eq!(&path, &e.best);
        prop_assert!((score - e.best_score).abs() < 1e-10);
        prop_assert!((path_score(&case, &path) - score).abs() < 1e-10);
    }

    #[test]
    fn viterbi_never_exceeds_marginal(case in case_strategy()) {
        let t = triangle_of(&case);
        let f = forward_log_likelihood(&t, &case.theta, case.variant).unwrap();
        let v = viterbi(&t, &case.theta, case.variant);
        prop_assert!(v.log_scores[0] <= f.rows[0].log_likelihood + 1e-12);
    }

    #[test]
    fn absorbing_variants_never_return_to_body(case in case_strategy()) {
        prop_assume!(case.variant != Variant::HmmNu);
        let (path, _) = viterbi_row(&case.row, &case.theta, case.variant);
        if let Some(first_tail) = path.iter().position(|&s| s == State::Tail) {
            prop_assert!(path[first_tail..].iter().all(|&s| s == State::Tail));
        }
    }

    #[test]
    fn forward_ignores_row_order(case in case_strategy(), other in case_strategy()) {
        let mut b = other.row.clone();
        b.truncate(M);
        let a = case.row.clone();
        let t1 = Triangle::from_rows(vec![a.clone(), b.clone()], M).unwrap();
        let t2 = Triangle::from_rows(vec![b, a], M).unwrap();
        let l1 = forward_log_likelihood(&t1, &case.theta, case.variant).unwrap().total_log_likelihood;
        let l2 = forward_log_likelihood(&t2, &case.theta, case.variant).unwrap().total_log_likelihood;
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
    }
}

#[test]
fn enumeration_counts_every_path() {
    assert_eq!(common::all_paths(1).len(), 1);
    assert_eq!(common::all_paths(4).len(), 8);
    assert!(common::all_paths(5).iter().all(|p| p[0] == State::Body));
}
