//! Randomized invariants of losses, sampling and training.

use hydranet_core::losses::{focal_loss, multitask_combine, shrinkage_loss, LossConfig, TaskLogVariances};
use hydranet_core::model::{HydraNet, ModelConfig};
use hydranet_core::sampler::{curriculum_probability, CurriculumSchedule, PatchSampler, SamplerConfig};
use hydranet_core::synth::{generate, SynthKind, SynthSpec};
use hydranet_core::trainer::{train_epoch, TrainConfig, TrainState};
use hydranet_core::transform::{binarize, log_magnitude};
use hydranet_core::volume::{build_volume, ZStackVolume};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn volume(seed: u64, size: usize, months: usize) -> ZStackVolume {
    let spec = SynthSpec::new(SynthKind::diffusion(), size, size, months, seed);
    build_volume(&generate(&spec).unwrap(), &spec.grid(), spec.month_range()).unwrap()
}

proptest! {
    #[test]
    fn base_losses_are_non_negative(p in prop::collection::vec(0.0f64..=1.0, 1..32), pos in any::<bool>(),
                                    alpha in 0.0f64..=1.0, gamma in 0.0f64..5.0, a in 0.1f64..20.0, c in 0.0f64..1.0,
                                    weighted in any::<bool>()) {
        let y = vec![if pos { 1.0 } else { 0.0 }; p.len()];
        let cfg = LossConfig { focal_alpha: alpha, focal_gamma: gamma, shrink_a: a, shrink_c: c, shrink_weighted: weighted, ..Default::default() };
        prop_assert!(focal_loss(&p, &y, &cfg).unwrap() >= 0.0);
        let target: Vec<f64> = p.iter().map(|v| 3.0 * v * v).collect();
        prop_assert!(shrinkage_loss(&p, &target, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn combined_loss_is_minimized_at_log_task_loss(l in 0.01f64..50.0, s in -5.0f64..5.0) {
        let opt = TaskLogVariances { s: [l.ln(); 6] };
        let other = TaskLogVariances { s: [s; 6] };
        let losses = [l; 6];
        prop_assert!(multitask_combine(&losses, &opt).unwrap() <= multitask_combine(&losses, &other).unwrap() + 1e-12);
    }

    #[test]
    fn focal_decreases_in_p_for_positives(p in 0.001f64..0.998, dp in 1e-4f64..1e-3, gamma in 0.1f64..5.0) {
        let cfg = LossConfig { focal_gamma: gamma, ..Default::default() };
        prop_assert!(focal_loss(&[p + dp], &[1.0], &cfg).unwrap() < focal_loss(&[p], &[1.0], &cfg).unwrap());
    }

    #[test]
    fn magnitude_order_and_presence(n in 0u64..1_000_000_000_000) {
        prop_assert!(log_magnitude(n + 1) > log_magnitude(n));
        prop_assert_eq!(binarize(log_magnitude(n)).unwrap() == 1, n >= 1);
    }

    #[test]
    fn curriculum_never_increases(p_end in 0.0f64..=1.0, extra in 0.0f64..=1.0, ramp in 0usize..50, epoch in 0usize..100) {
        let schedule = CurriculumSchedule { p_start: p_end + (1.0 - p_end) * extra, p_end, ramp_epochs: Some(ramp) };
        let now = curriculum_probability(epoch, &schedule);
        let next = curriculum_probability(epoch + 1, &schedule);
        prop_assert!(next <= now);
        prop_assert!((p_end..=schedule.p_start).contains(&now));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn patches_stay_in_bounds_and_replay(seed in any::<u64>(), size in prop::sample::select(vec![4usize, 8, 16]),
                                         crop in prop::option::of(2usize..6), epoch in 0usize..20) {
        let v = volume(seed, 16, 8);
        let config = SamplerConfig { patch_size: size, temporal_crop: crop, curriculum: CurriculumSchedule::default().with_total_epochs(10) };
        let sampler = PatchSampler::new(&v, config).unwrap();
        let a = sampler.make_batch(4, epoch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sampler.make_batch(4, epoch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for p in &a {
            prop_assert!(p.origin.0 + size <= 16 && p.origin.1 + size <= 16);
            prop_assert_eq!(p.inputs.len(), p.months() * 3 * size * size);
            prop_assert_eq!(p.months(), crop.unwrap_or(8).min(8));
            let first = v.month_index(p.source_month_ids[0]).unwrap();
            for t in 0..p.months() {
                for c in 0..3 {
                    for r in 0..size {
                        for col in 0..size {
                            let got = p.frame(t)[(c * size + r) * size + col];
                            prop_assert_eq!(got, v.value(first + t, c, p.origin.0 + r, p.origin.1 + col));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn training_is_a_function_of_the_seed() {
    let v = volume(3, 16, 6);
    let sampler = PatchSampler::new(&v, SamplerConfig { patch_size: 8, ..Default::default() }).unwrap();
    let cfg = TrainConfig { batches_per_epoch: 2, batch_size: 2, ..Default::default() };
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = HydraNet::new(ModelConfig { levels: 2, base_filters: 4, ..Default::default() }, &mut rng).unwrap();
        let mut state = TrainState::new(model, &cfg);
        let mut log = Vec::new();
        for _ in 0..2 {
            log.extend(train_epoch(&mut state, &sampler, &LossConfig::default(), &cfg, &mut rng, &|| 0.0).unwrap());
        }
        (state, log)
    };
    let (a, log_a) = run(1);
    let (b, log_b) = run(1);
    let (c, _) = run(2);
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_ne!(a.model, c.model);
    assert!(log_a.iter().all(|e| e.total_loss.is_finite()));
    assert_eq!(log_a.len(), 4);
}
