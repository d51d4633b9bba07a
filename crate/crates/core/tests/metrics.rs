//! Ranking metrics against brute-force oracles, plus invariances of all four metrics.

use hydranet_core::metrics::{average_precision, brier, mse, roc_auc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
fn auc_oracle(score: &[f64], label: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in score.iter().enumerate() {
        for (j, &sj) in score.iter().enumerate() {
            if label[i] && !label[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Mean over positives of precision at the positive's rank, ranks enumerated under
/// the order (score descending, index ascending).
fn ap_oracle(score: &[f64], label: &[bool]) -> Option<f64> {
    let ahead = |i: usize, j: usize| score[j] > score[i] || (score[j] == score[i] && j < i);
    let positives: Vec<usize> = (0..score.len()).filter(|&i| label[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &i in &positives {
        let rank = 1 + (0..score.len()).filter(|&j| ahead(i, j)).count();
        let hits = 1 + positives.iter().filter(|&&j| ahead(i, j)).count();
        sum += hits as f64 / rank as f64;
    }
    Some(sum / positives.len() as f64)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

/// Scores drawn from a small set of levels so ties are common.
fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(1..=64);
    let levels = rng.gen_range(1..=n.max(2));
    let prevalence = rng.gen_range(0.0..1.0);
    let score = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
    let label = (0..n).map(|_| rng.gen_bool(prevalence)).collect();
    (score, label)
}

#[test]
fn ranking_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (score, label) = instance(&mut rng);
        assert!(close(roc_auc(&score, &label, None), auc_oracle(&score, &label)), "{score:?} {label:?}");
        assert!(close(average_precision(&score, &label, None), ap_oracle(&score, &label)), "{score:?} {label:?}");
    }
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<bool>)> {
    (1usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), 0.0f64..1.0], n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(prop::bool::weighted(0.8), n),
        )
    })
}

proptest! {
    #[test]
    fn ranking_metrics_ignore_monotone_transforms((score, label, _) in scored(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let moved: Vec<f64> = score.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(roc_auc(&score, &label, None), roc_auc(&moved, &label, None));
        prop_assert_eq!(average_precision(&score, &label, None), average_precision(&moved, &label, None));
    }

    #[test]
    fn metrics_see_only_masked_cells((score, label, mask) in scored(), noise in 0.0f64..1.0) {
        prop_assume!(mask.iter().any(|&m| m));
        let mut perturbed = score.clone();
        let mut flipped = label.clone();
        for i in 0..score.len() {
            if !mask[i] {
                perturbed[i] = noise;
                flipped[i] = !flipped[i];
            }
        }
        let m = Some(mask.as_slice());
        prop_assert_eq!(roc_auc(&score, &label, m), roc_auc(&perturbed, &flipped, m));
        prop_assert_eq!(average_precision(&score, &label, m), average_precision(&perturbed, &flipped, m));
        prop_assert_eq!(brier(&score, &label, m).unwrap(), brier(&perturbed, &flipped, m).unwrap());
        let target: Vec<f64> = label.iter().map(|&l| l as u8 as f64).collect();
        prop_assert_eq!(mse(&score, &target, m).unwrap(), mse(&perturbed, &target, m).unwrap());
    }

    #[test]
    fn mse_scales_quadratically(pred in prop::collection::vec(-10.0f64..10.0, 1..64), k in -4.0f64..4.0) {
        let zeros = vec![0.0; pred.len()];
        let scaled: Vec<f64> = pred.iter().map(|p| k * p).collect();
        let base = mse(&pred, &zeros, None).unwrap();
        let got = mse(&scaled, &zeros, None).unwrap();
        prop_assert!((got - k * k * base).abs() <= 1e-9 * got.max(1.0));
    }

    #[test]
    fn brier_is_bounded((score, label, _) in scored()) {
        let b = brier(&score, &label, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
    }
}

#[test]
fn random_scores_give_prevalence_level_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 200_000;
    let label: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
    let score: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let ap = average_precision(&score, &label, None).unwrap();
    assert!((ap - 0.05).abs() < 0.01, "{ap}");
    let auc = roc_auc(&score, &label, None).unwrap();
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}
