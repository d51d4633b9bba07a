//! Rollout contracts: frozen cell state, regression-only feedback, sample
//! exchangeability and horizon composability.

use hydranet_core::forecast::{forecast_posterior, sample_rng, summarize, volume_frame, warmup, ForecastCube, Rollout};
use hydranet_core::model::{HydraNet, LstmLevels, ModelConfig};
use hydranet_core::synth::{generate, SynthKind, SynthSpec};
use hydranet_core::volume::{build_volume, ZStackVolume};
use hydranet_core::{Error, HEAD_NAMES, N_HEADS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64, lstm_levels: LstmLevels, dropout_rate: f64) -> HydraNet<f32> {
    let cfg = ModelConfig { levels: 2, base_filters: 4, lstm_levels, dropout_rate, ..ModelConfig::default() };
    HydraNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn observed(seed: u64, months: usize) -> ZStackVolume {
    let spec = SynthSpec::new(SynthKind::diffusion(), 8, 8, months, seed);
    build_volume(&generate(&spec).unwrap(), &spec.grid(), spec.month_range()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cell_state_is_frozen_during_rollout(seed in any::<u64>(), all in any::<bool>(), steps in 1usize..8) {
        let lstm = if all { LstmLevels::AllLevels } else { LstmLevels::BottleneckOnly };
        let m = model(seed, lstm, 0.3);
        let obs = observed(seed, 6);
        let warm = warmup(&m, &obs.slice_months(0..5)).unwrap();
        let mut roll = Rollout::new(&m, &warm, volume_frame(&obs, 5));
        let mut rng = sample_rng(seed, 0);
        let mut hidden_moved = false;
        for _ in 0..steps {
            let before: Vec<Vec<u32>> = roll.state().levels.iter().map(|l| l.cell.data().iter().map(|v| v.to_bits()).collect()).collect();
            let hidden_before = roll.state().levels[0].hidden.clone();
            roll.advance(&mut rng).unwrap();
            let after: Vec<Vec<u32>> = roll.state().levels.iter().map(|l| l.cell.data().iter().map(|v| v.to_bits()).collect()).collect();
            prop_assert_eq!(before, after);
            hidden_moved |= hidden_before != roll.state().levels[0].hidden;
        }
        prop_assert!(hidden_moved);
        for (level, w) in roll.state().levels.iter().zip(&warm.levels) {
            prop_assert_eq!(&level.cell, &w.cell);
        }
    }

    #[test]
    fn summary_ignores_sample_order(seed in any::<u64>(), n in 1usize..12) {
        let m = model(seed, LstmLevels::BottleneckOnly, 0.3);
        let cube = forecast_posterior(&m, &observed(seed, 4), 3, n, seed).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(n / 3);
        let permuted = ForecastCube {
            samples: order.iter().flat_map(|&s| cube.sample(s).iter().copied()).collect(),
            ..cube.clone()
        };
        let q = [0.05, 0.5, 0.95];
        prop_assert_eq!(summarize(&cube, &q).unwrap(), summarize(&permuted, &q).unwrap());
    }
}

#[test]
fn shorter_horizon_is_a_prefix() {
    let m = model(3, LstmLevels::BottleneckOnly, 0.2);
    let obs = observed(3, 10);
    let long = forecast_posterior(&m, &obs, 36, 3, 42).unwrap();
    for k in [1, 5, 12] {
        let short = forecast_posterior(&m, &obs, k, 3, 42).unwrap();
        for s in 0..3 {
            assert_eq!(short.sample(s), &long.sample(s)[..short.trajectory_len()], "horizon {k}, sample {s}");
        }
    }
}

#[test]
fn classification_heads_never_feed_back() {
    let obs = observed(4, 6);
    let base = model(4, LstmLevels::BottleneckOnly, 0.0);
    let mut nudged = base.clone();
    for name in ["dec_cls_sb.head.bias", "dec_cls_ns.head.bias", "dec_cls_os.head.bias"] {
        let id = nudged.params().find(name).unwrap_or_else(|| panic!("missing {name}"));
        nudged.params_mut().value_mut(id)[0] += 2.0;
    }
    let a = forecast_posterior(&base, &obs, 8, 2, 1).unwrap();
    let b = forecast_posterior(&nudged, &obs, 8, 2, 1).unwrap();
    let plane = 64;
    let mut cls_changed = false;
    for chunk in 0..a.samples.len() / plane {
        let range = chunk * plane..(chunk + 1) * plane;
        if chunk % N_HEADS < 3 {
            assert_eq!(a.samples[range.clone()], b.samples[range], "{} moved", HEAD_NAMES[chunk % N_HEADS]);
        } else {
            cls_changed |= a.samples[range.clone()] != b.samples[range];
        }
    }
    assert!(cls_changed);
}

#[test]
fn samples_differ_and_stay_in_range() {
    let m = model(5, LstmLevels::BottleneckOnly, 0.3);
    let obs = observed(5, 6);
    let cube = forecast_posterior(&m, &obs, 4, 4, 9).unwrap();
    cube.validate().unwrap();
    assert_eq!(cube.first_forecast_month_id, 6);
    assert_eq!(cube.samples.len(), 4 * 4 * N_HEADS * 64);
    assert_ne!(cube.sample(0), cube.sample(1));
    assert_eq!(cube, forecast_posterior(&m, &obs, 4, 4, 9).unwrap());
    assert_ne!(cube, forecast_posterior(&m, &obs, 4, 4, 10).unwrap());
}

#[test]
fn zero_dropout_collapses_the_posterior() {
    let m = model(6, LstmLevels::BottleneckOnly, 0.0);
    let cube = forecast_posterior(&m, &observed(6, 5), 3, 4, 0).unwrap();
    let summary = summarize(&cube, &[0.05, 0.95]).unwrap();
    assert!(summary.std.iter().all(|&v| v == 0.0));
    assert_eq!(summary.quantile(0.05), summary.quantile(0.95));
}

#[test]
fn empty_history_is_rejected() {
    let m = model(7, LstmLevels::BottleneckOnly, 0.1);
    let obs = observed(7, 3).slice_months(0..0);
    assert!(matches!(forecast_posterior(&m, &obs, 3, 2, 0), Err(Error::Shape(_))));
    assert!(warmup(&m, &obs).is_err());
}
