mod common;

use common::{central_difference, cox_direct, random_survival_batch, rng};
use gliopath::heads::{bce_loss, cox_loss, BinaryBatch, SurvivalBatch};
use proptest::prelude::*;
use rand::Rng;

fn cox(risks: &[f64], times: &[f64], events: &[u8]) -> (f64, Vec<f64>) {
    cox_loss(&SurvivalBatch { risks, times, events }).unwrap()
}

#[test]
fn cox_matches_direct_formula_and_finite_differences() {
    let mut r = rng(2024);
    for case in 0..200 {
        let (risks, times, events) = random_survival_batch(&mut r, 12);
        let (loss, grad) = cox(&risks, &times, &events);
        let direct = cox_direct(&risks, &times, &events);
        assert!((loss - direct).abs() <= 1e-10, "case {case}: {loss} vs {direct}");
        let numeric = central_difference(|v| cox_direct(v, &times, &events), &risks, 1e-5);
        for (a, n) in grad.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-8, "case {case}: {a} vs {n}");
        }
    }
}

#[test]
fn bce_matches_finite_differences() {
    let mut r = rng(5);
    for _ in 0..200 {
        let n = r.random_range(1..=16);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-6.0..6.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.5))).collect();
        let (_, grad) = bce_loss(&BinaryBatch { logits: &logits, labels: &labels }).unwrap();
        let numeric = central_difference(
            |z| bce_loss(&BinaryBatch { logits: z, labels: &labels }).unwrap().0,
            &logits,
            1e-5,
        );
        for (a, n) in grad.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-8, "{a} vs {n}");
        }
    }
}

#[test]
fn duplicated_time_follows_breslow_oracle() {
    let mut r = rng(77);
    for _ in 0..200 {
        let (risks, mut times, events) = random_survival_batch(&mut r, 12);
        if times.len() < 2 {
            continue;
        }
        let (a, b) = (r.random_range(0..times.len()), r.random_range(0..times.len()));
        times[a] = times[b];
        let (loss, _) = cox(&risks, &times, &events);
        assert!((loss - cox_direct(&risks, &times, &events)).abs() <= 1e-10);
    }
}

fn batch_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<u8>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(1u32..40, n),
            prop::collection::vec(0u8..=1, n),
            0..n,
        )
            .prop_map(|(r, t, mut e, k)| {
                e[k] = 1;
                (r, t.into_iter().map(f64::from).collect(), e)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn cox_is_shift_invariant((risks, times, events) in batch_strategy(), c in -50.0f64..50.0) {
        let (l0, _) = cox(&risks, &times, &events);
        let shifted: Vec<f64> = risks.iter().map(|x| x + c).collect();
        let (l1, _) = cox(&shifted, &times, &events);
        prop_assert!((l0 - l1).abs() <= 1e-9 * l0.abs().max(1.0));
    }

    #[test]
    fn cox_gradient_sums_to_zero_without_censoring_or_ties(n in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let risks: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let times: Vec<f64> = (0..n).map(|i| (i + 1) as f64 * 10.0).collect();
        let (_, grad) = cox(&risks, &times, &vec![1; n]);
        prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
    }

    #[test]
    fn cox_is_permutation_invariant((risks, times, events) in batch_strategy(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..risks.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng(seed));
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let e2: Vec<u8> = order.iter().map(|&i| events[i]).collect();
        let (l0, g0) = cox(&risks, &times, &events);
        let (l1, g1) = cox(&pick(&risks), &pick(&times), &e2);
        prop_assert!((l0 - l1).abs() <= 1e-12 * l0.abs().max(1.0));
        for (k, &i) in order.iter().enumerate() {
            prop_assert!((g1[k] - g0[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn raising_earliest_death_risk_lowers_loss((risks, times, events) in batch_strategy(), bump in 0.01f64..3.0) {
        // the earliest death: smallest time among events, first on ties
        let i = (0..risks.len())
            .filter(|&i| events[i] == 1)
            .min_by(|&a, &b| times[a].total_cmp(&times[b]))
            .unwrap();
        // strictness needs someone else in its risk set, and no other death at
        // the same time (a tied death would also be charged for the raise)
        prop_assume!((0..risks.len()).any(|j| j != i && times[j] >= times[i]));
        prop_assume!((0..risks.len()).all(|j| j == i || events[j] == 0 || times[j] != times[i]));
        let (l0, _) = cox(&risks, &times, &events);
        let mut raised = risks.clone();
        raised[i] += bump;
        let (l1, _) = cox(&raised, &times, &events);
        prop_assert!(l1 < l0);
    }
}
