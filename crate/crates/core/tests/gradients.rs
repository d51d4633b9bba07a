//! Analytic gradients against central finite differences in f64.

use hydranet_core::losses::{
    focal_loss, focal_loss_grad, multitask_combine, multitask_combine_grad, shrinkage_loss, shrinkage_loss_grad,
    LossConfig, TaskLogVariances,
};
use hydranet_core::model::{HeadOutputs, HydraNet, LstmLevels, Mode, ModelConfig, StateGrads};
use hydranet_core::sampler::PatchSequence;
use hydranet_core::trainer::batch_gradients;
use hydranet_core::{Tensor, N_HEADS, N_TYPES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, 1e-6)
}

/// Relative error whose denominator never drops below `floor`, the finite-difference noise scale.
fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

#[test]
fn focal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let cfg = LossConfig { focal_alpha: rng.gen_range(0.05..0.95), focal_gamma: rng.gen_range(0.0..4.0), ..Default::default() };
        let p = rng.gen_range(0.01..0.99);
        let y = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let (_, g) = focal_loss_grad(&[p], &[y], &cfg).unwrap();
        let numeric = central(|q| focal_loss(&[q], &[y], &cfg).unwrap(), p);
        assert!(rel_err(g[0], numeric) < TOL, "p={p} y={y} {cfg:?}: {} vs {numeric}", g[0]);
    }
}

#[test]
fn shrinkage_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let cfg = LossConfig {
            shrink_a: rng.gen_range(1.0..20.0),
            shrink_c: rng.gen_range(0.05..0.5),
            shrink_weighted: i % 2 == 1,
            ..Default::default()
        };
        let target = rng.gen_range(0.0..5.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let pred = target + sign * rng.gen_range(0.01..3.0);
        let (_, g) = shrinkage_loss_grad(&[pred], &[target], &cfg).unwrap();
        let numeric = central(|q| shrinkage_loss(&[q], &[target], &cfg).unwrap(), pred);
        assert!(rel_err(g[0], numeric) < TOL, "pred={pred} target={target}: {} vs {numeric}", g[0]);
    }
}

#[test]
fn multitask_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let losses: [f64; N_HEADS] = core::array::from_fn(|_| rng.gen_range(0.0..5.0));
        let lv = TaskLogVariances { s: core::array::from_fn(|_| rng.gen_range(-3.0..3.0)) };
        let (_, dl, ds) = multitask_combine_grad(&losses, &lv).unwrap();
        for i in 0..N_HEADS {
            let num_l = central(
                |x| {
                    let mut l = losses;
                    l[i] = x;
                    multitask_combine(&l, &lv).unwrap()
                },
                losses[i],
            );
            let num_s = central(
                |x| {
                    let mut s = lv;
                    s.s[i] = x;
                    multitask_combine(&losses, &s).unwrap()
                },
                lv.s[i],
            );
            assert!(rel_err(dl[i], num_l) < TOL);
            assert!(rel_err(ds[i], num_s) < TOL);
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Zero biases put every pre-activation of an all-zero region exactly on the ReLU kink,
/// where central differences are meaningless; random biases move them off it.
fn jitter_biases(model: &mut HydraNet<f64>, rng: &mut ChaCha8Rng) {
    for p in model.params_mut().entries_mut() {
        if p.name.ends_with(".bias") {
            for v in &mut p.value {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
    }
}

fn small_config(lstm_levels: LstmLevels) -> ModelConfig {
    ModelConfig { levels: 2, base_filters: 3, lstm_levels, dropout_rate: 0.2, ..ModelConfig::default() }
}

/// Weighted sum of all head outputs of one training-mode step; the dropout masks come
/// from a fixed seed so every evaluation sees the same masks.
fn one_step_objective(model: &HydraNet<f64>, x: &Tensor<f64>, state: &hydranet_core::model::RecurrentState<f64>, w: &HeadOutputs<f64>) -> f64 {
    let (out, _) = model.step(x, state, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
    dot(&out.reg, &w.reg) + dot(&out.cls, &w.cls)
}

#[test]
fn one_step_model_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for trial in 0..10 {
        let levels = if trial % 2 == 0 { LstmLevels::BottleneckOnly } else { LstmLevels::AllLevels };
        let mut model: HydraNet<f64> = HydraNet::new(small_config(levels), &mut rng).unwrap();
        let x = random_tensor(&mut rng, [2, N_TYPES, 8, 8], 0.0, 3.0);
        let mut state = model.init_state(2, 8, 8).unwrap();
        for level in &mut state.levels {
            level.hidden = random_tensor(&mut rng, level.hidden.shape(), -0.5, 0.5);
            level.cell = random_tensor(&mut rng, level.cell.shape(), -1.0, 1.0);
        }
        let w = HeadOutputs {
            reg: random_tensor(&mut rng, [2, N_TYPES, 8, 8], -1.0, 1.0),
            cls: random_tensor(&mut rng, [2, N_TYPES, 8, 8], -1.0, 1.0),
        };
        let (_, _, trace) = model.step_traced(&x, &state, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let mut grads = model.params().zero_grads();
        let d_state = model.backward_step(&trace, &w, &StateGrads::zeros_like(&state), &mut grads);

        let n_params = model.params().len();
        for _ in 0..12 {
            let p = rng.gen_range(0..n_params);
            let id = model.params().id(p);
            let k = rng.gen_range(0..model.params().value(id).len());
            let x0 = model.params().value(id)[k];
            let f = |m: &mut HydraNet<f64>, v: f64| {
                m.params_mut().value_mut(id)[k] = v;
                one_step_objective(m, &x, &state, &w)
            };
            let numeric = (f(&mut model, x0 + STEP) - f(&mut model, x0 - STEP)) / (2.0 * STEP);
            model.params_mut().value_mut(id)[k] = x0;
            let analytic = grads.get(id)[k];
            let name = &model.params().entries()[p].name;
            assert!(rel_err(analytic, numeric) < TOL, "{name}[{k}]: {analytic} vs {numeric}");
            checked += 1;
        }

        // incoming state gradients
        for (level, (dh, dc)) in d_state.levels.iter().enumerate() {
            for (which, analytic) in [(0, dh), (1, dc)] {
                let k = rng.gen_range(0..analytic.data().len());
                let eval = |v: f64| {
                    let mut s = state.clone();
                    let t = if which == 0 { &mut s.levels[level].hidden } else { &mut s.levels[level].cell };
                    t.data_mut()[k] = v;
                    one_step_objective(&model, &x, &s, &w)
                };
                let base = if which == 0 { &state.levels[level].hidden } else { &state.levels[level].cell };
                let numeric = central(eval, base.data()[k]);
                assert!(rel_err(analytic.data()[k], numeric) < TOL);
                checked += 1;
            }
        }
    }
    assert!(checked >= 100);
}

fn sequence(rng: &mut ChaCha8Rng, months: usize, size: usize) -> PatchSequence {
    let inputs = (0..months * N_TYPES * size * size)
        .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.5..4.0) } else { 0.0 })
        .collect();
    PatchSequence { inputs, channels: N_TYPES, size, origin: (0, 0), source_month_ids: (0..months as u32).collect() }
}

#[test]
fn unified_loss_gradient_through_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = LossConfig::default();
    for trial in 0..6 {
        let levels = if trial % 2 == 0 { LstmLevels::BottleneckOnly } else { LstmLevels::AllLevels };
        let mut model: HydraNet<f64> = HydraNet::new(small_config(levels), &mut rng).unwrap();
        jitter_biases(&mut model, &mut rng);
        let patches: Vec<PatchSequence> = (0..2).map(|_| sequence(&mut rng, 3 + trial % 2, 8)).collect();
        let lv = TaskLogVariances { s: core::array::from_fn(|_| rng.gen_range(-1.0..1.0)) };
        let loss = |m: &HydraNet<f64>, lv: &TaskLogVariances| {
            batch_gradients(m, lv, &patches, &cfg, &mut ChaCha8Rng::seed_from_u64(7), (0, 0)).unwrap()
        };
        let g = loss(&model, &lv);
        for _ in 0..25 {
            let p = rng.gen_range(0..model.params().len());
            let id = model.params().id(p);
            let k = rng.gen_range(0..model.params().value(id).len());
            let x0 = model.params().value(id)[k];
            model.params_mut().value_mut(id)[k] = x0 + STEP;
            let up = loss(&model, &lv).total_loss;
            model.params_mut().value_mut(id)[k] = x0 - STEP;
            let down = loss(&model, &lv).total_loss;
            model.params_mut().value_mut(id)[k] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let name = &model.params().entries()[p].name;
            assert!(rel_err_floor(g.grads.get(id)[k], numeric, 1e-4) < TOL, "{name}[{k}]: {} vs {numeric}", g.grads.get(id)[k]);
        }
        for i in 0..N_HEADS {
            let numeric = central(
                |v| {
                    let mut s = lv;
                    s.s[i] = v;
                    loss(&model, &s).total_loss
                },
                lv.s[i],
            );
            assert!(rel_err(g.d_logvars[i], numeric) < TOL);
        }
    }
}
