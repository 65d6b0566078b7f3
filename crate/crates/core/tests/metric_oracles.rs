//! Ranking and span metrics against brute-force references.

mod common;

use common::{
    random_run, ref_average_precision, ref_em, ref_f1, ref_hit, ref_predicted, rng, toks,
};
use proptest::prelude::*;
use quotefuse::metrics::{
    average_precision, bow_f1, evaluate_run, exact_match, hit_at_k, permutation_test,
    predicted_span, top_k_accuracy, RunEvaluation, SpanSetting,
};

#[test]
fn metrics_match_references_on_random_instances() {
    let mut r = rng(5);
    for _ in 0..10 {
        let (preds, gold) = random_run(&mut r, 100);
        for setting in [SpanSetting::Positive, SpanSetting::Top] {
            let (ranking, span) = evaluate_run(&preds, &gold, setting).unwrap();
            let (mut ap, mut em, mut f1) = (vec![], vec![], vec![]);
            let mut acc = [0.0; 3];
            for (p, g) in preds.iter().zip(&gold) {
                let a = ref_average_precision(&p.ranking, &g.positive_paragraphs);
                assert!(
                    (average_precision(&p.ranking, &g.positive_paragraphs).unwrap() - a).abs()
                        < 1e-9
                );
                ap.push(a);
                for (slot, k) in acc.iter_mut().zip([1, 3, 5]) {
                    *slot += ref_hit(&p.ranking, &g.positive_paragraphs, k) / preds.len() as f64;
                }
                let want = ref_predicted(p, g, setting == SpanSetting::Top);
                assert_eq!(predicted_span(p, g, setting), want);
                let gt = g.gold_tokens();
                em.push(ref_em(&want, &gt));
                f1.push(ref_f1(&want, &gt));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!((ranking.map - mean(&ap)).abs() < 1e-9);
            for (a, k) in acc.iter().zip([1, 3, 5]) {
                assert!((ranking.acc[&k] - a).abs() < 1e-9, "acc@{k}");
            }
            assert!((span.em - mean(&em)).abs() < 1e-9);
            assert!((span.f1 - mean(&f1)).abs() < 1e-9);
            assert!(ranking.acc[&1] <= ranking.acc[&3] && ranking.acc[&3] <= ranking.acc[&5]);
        }
    }
}

#[test]
fn single_positive_ap_is_reciprocal_rank() {
    for n in 1..=12usize {
        let order: Vec<usize> = (0..n).rev().collect();
        for (rank, &p) in order.iter().enumerate() {
            assert_eq!(
                average_precision(&order, &[p]).unwrap(),
                1.0 / (rank + 1) as f64
            );
        }
    }
}

#[test]
fn hand_computed_values() {
    // positives at ranks 2 and 4: (1/2 + 2/4) / 2
    assert_eq!(average_precision(&[9, 3, 7, 1], &[1, 3]).unwrap(), 0.5);
    assert!(average_precision(&[0, 1], &[]).is_err());
    assert!(average_precision(&[0, 1], &[5]).is_err());
    assert_eq!(exact_match(&toks("The Cat"), &toks("the cat")), 1.0);
    assert_eq!(exact_match(&toks("cat the"), &toks("the cat")), 0.0);
    // overlap 2, precision 2/3, recall 2/4
    let f = bow_f1(&toks("a b b"), &toks("b a c d"));
    assert!((f - 2.0 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5)).abs() < 1e-15);
    assert_eq!(bow_f1(&[], &toks("a")), 0.0);
    assert_eq!(bow_f1(&toks("x"), &toks("y")), 0.0);
}

#[test]
fn accuracy_counts_quotes_with_a_hit() {
    let runs: Vec<(Vec<usize>, Vec<usize>)> = vec![
        (vec![2, 0, 1], vec![0]),
        (vec![0, 1, 2], vec![0]),
        (vec![1, 2, 0], vec![0]),
    ];
    let view = || runs.iter().map(|(o, p)| (o.as_slice(), p.as_slice()));
    assert!((top_k_accuracy(view(), 1) - 1.0 / 3.0).abs() < 1e-15);
    assert!((top_k_accuracy(view(), 2) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(top_k_accuracy(view(), 3), 1.0);
    assert!(hit_at_k(&[4, 5], &[5], 2) && !hit_at_k(&[4, 5], &[5], 1));
}

#[test]
fn permutation_test_is_a_valid_p_value() {
    let a = vec![1.0; 30];
    let p_same = permutation_test(&a, &a, 999, 1).unwrap();
    assert_eq!(p_same, 1.0);
    let b: Vec<f64> = (0..30)
        .map(|i| if i % 2 == 0 { 0.0 } else { 1.0 })
        .collect();
    let p = permutation_test(&a, &b, 999, 1).unwrap();
    assert!(p < 0.01, "{p}");
    assert_eq!(p, permutation_test(&a, &b, 999, 1).unwrap());
    assert!(permutation_test(&a, &b[..3], 10, 1).is_err());
}

#[test]
fn run_evaluation_reports_both_settings() {
    let mut r = rng(6);
    let (preds, gold) = random_run(&mut r, 40);
    let ev = RunEvaluation::compute(&preds, &gold).unwrap();
    let (_, top) = evaluate_run(&preds, &gold, SpanSetting::Top).unwrap();
    let (_, pos) = evaluate_run(&preds, &gold, SpanSetting::Positive).unwrap();
    assert_eq!(ev.top, top);
    assert_eq!(ev.positive, pos);
    assert!(evaluate_run(&preds[1..], &gold, SpanSetting::Top).is_err());
}

proptest! {
    #[test]
    fn ap_matches_reference(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), k in 1usize..=8) {
        let positives: Vec<usize> = (0..k).collect();
        let got = average_precision(&perm, &positives).unwrap();
        prop_assert!((got - ref_average_precision(&perm, &positives)).abs() < 1e-12);
        prop_assert!(got > 0.0 && got <= 1.0);
    }

    #[test]
    fn f1_matches_reference_and_is_symmetric(
        a in proptest::collection::vec("[a-cA-C]", 0..12),
        b in proptest::collection::vec("[a-cA-C]", 0..12),
    ) {
        let f = bow_f1(&a, &b);
        prop_assert!((f - ref_f1(&a, &b)).abs() < 1e-12);
        prop_assert!((f - bow_f1(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f));
        if !a.is_empty() && exact_match(&a, &b) == 1.0 {
            prop_assert!((f - 1.0).abs() < 1e-12);
        }
    }
}
