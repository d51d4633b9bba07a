//! Teacher-forced training over curriculum-sampled patch batches.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{focal_loss_grad, multitask_combine_grad, shrinkage_loss_grad, LossConfig, TaskLogVariances};
use crate::model::{HeadOutputs, HydraNet, Mode, StateGrads};
use crate::nn::Grads;
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::real::Real;
use crate::sampler::{curriculum_probability, PatchSampler, PatchSequence};
use crate::tensor::Tensor;
use crate::transform::presence;
use crate::{HEAD_NAMES, N_HEADS, N_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batches_per_epoch: 32,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::AdamLike,
            seed: 0,
            checkpoint_every: 10,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("epochs, batches_per_epoch, batch_size and checkpoint_every must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip must be >= 0, got {}", self.grad_clip)));
        }
        Ok(())
    }
}

/// One optimizer step, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub total_loss: f64,
    pub task_losses: [f64; N_HEADS],
    pub logvars: [f64; N_HEADS],
    pub curriculum_p: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

/// Next-month regression and classification targets, `[T-1 × 3 × P × P]` each.
pub fn compute_targets(patch: &PatchSequence) -> Result<(Vec<f32>, Vec<f32>)> {
    if patch.months() < 2 {
        return Err(Error::Shape(format!("need at least 2 months for targets, got {}", patch.months())));
    }
    let plane = patch.size * patch.size;
    let mut reg = Vec::with_capacity((patch.months() - 1) * N_TYPES * plane);
    for t in 1..patch.months() {
        reg.extend_from_slice(&patch.frame(t)[..N_TYPES * plane]);
    }
    let cls = reg.iter().map(|&m| presence(m)).collect();
    Ok((reg, cls))
}

/// Loss values and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients<F> {
    pub total_loss: f64,
    pub task_losses: [f64; N_HEADS],
    pub grads: Grads<F>,
    pub d_logvars: [f64; N_HEADS],
}

fn frame_tensor<F: Real>(patches: &[PatchSequence], t: usize) -> Tensor<F> {
    let p = patches[0].size;
    let plane = p * p;
    let mut x = Tensor::zeros([patches.len(), N_TYPES, p, p]);
    for (n, patch) in patches.iter().enumerate() {
        for (dst, &src) in x.item_mut(n).iter_mut().zip(&patch.frame(t)[..N_TYPES * plane]) {
            *dst = F::of(src as f64);
        }
    }
    x
}

/// Unified loss of a batch under teacher forcing, backpropagated through every month.
///
/// The step-`t` outputs are scored against month `t + 1`. Task losses are means over
/// all cells, patches and months; `epoch` and `batch` only label errors.
pub fn batch_gradients<F: Real, R: Rng + ?Sized>(
    model: &HydraNet<F>,
    logvars: &TaskLogVariances,
    patches: &[PatchSequence],
    loss_cfg: &LossConfig,
    rng: &mut R,
    (epoch, batch): (usize, usize),
) -> Result<BatchGradients<F>> {
    let first = patches.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (months, size) = (first.months(), first.size);
    if patches.iter().any(|p| p.months() != months || p.size != size || p.channels < N_TYPES) {
        return Err(Error::Shape("patches in a batch must share length, size and channels".into()));
    }
    let targets: Vec<(Vec<f32>, Vec<f32>)> = patches.iter().map(compute_targets).collect::<Result<_>>()?;
    let steps = months - 1;
    let plane = size * size;
    let weights: [f64; N_HEADS] = core::array::from_fn(|h| crate::math::exp(-logvars.s[h]) / steps as f64);

    let mut state = model.init_state(patches.len(), size, size)?;
    let mut tape = Vec::with_capacity(steps);
    let mut sums = [0.0f64; N_HEADS];
    let mut pred = Vec::with_capacity(patches.len() * plane);
    let mut truth = Vec::with_capacity(patches.len() * plane);
    for t in 0..steps {
        let x = frame_tensor::<F>(patches, t);
        let (out, next, trace) = model.step_traced(&x, &state, Mode::Train, rng)?;
        let mut d_out = HeadOutputs::zeros(out.reg.shape());
        for h in 0..N_HEADS {
            let ch = h % N_TYPES;
            let (src, dst) = if h < N_TYPES { (&out.reg, &mut d_out.reg) } else { (&out.cls, &mut d_out.cls) };
            pred.clear();
            truth.clear();
            for (n, (reg_t, cls_t)) in targets.iter().enumerate() {
                pred.extend_from_slice(src.plane(n, ch));
                let tgt = if h < N_TYPES { reg_t } else { cls_t };
                let off = (t * N_TYPES + ch) * plane;
                truth.extend(tgt[off..off + plane].iter().map(|&v| F::of(v as f64)));
            }
            let (loss, grad) = if h < N_TYPES {
                shrinkage_loss_grad(&pred, &truth, loss_cfg)?
            } else {
                focal_loss_grad(&pred, &truth, loss_cfg)?
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { head: HEAD_NAMES[h], epoch, batch });
            }
            sums[h] += loss;
            let w = F::of(weights[h]);
            for (n, chunk) in grad.chunks(plane).enumerate() {
                for (d, &g) in dst.plane_mut(n, ch).iter_mut().zip(chunk) {
                    *d = g * w;
                }
            }
        }
        tape.push((trace, d_out));
        state = next;
    }
    let task_losses: [f64; N_HEADS] = core::array::from_fn(|h| sums[h] / steps as f64);
    if let Some(h) = task_losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss { head: HEAD_NAMES[h], epoch, batch });
    }
    let (total_loss, _, d_logvars) = multitask_combine_grad(&task_losses, logvars)?;

    let mut grads = model.params().zero_grads();
    let mut d_state = StateGrads::zeros_like(&state);
    while let Some((trace, d_out)) = tape.pop() {
        d_state = model.backward_step(&trace, &d_out, &d_state, &mut grads);
    }
    Ok(BatchGradients { total_loss, task_losses, grads, d_logvars })
}

/// Model, task weights, optimizer state and progress counters of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: HydraNet<f32>,
    pub logvars: TaskLogVariances,
    pub optimizer: Optimizer,
    /// Epochs completed.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: HydraNet<f32>, cfg: &TrainConfig) -> Self {
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params());
        TrainState { model, logvars: TaskLogVariances::default(), optimizer, epoch: 0 }
    }
}

/// Runs `batches_per_epoch` optimizer steps for epoch `state.epoch` and advances the counter.
///
/// `clock` supplies elapsed seconds for the log.
pub fn train_epoch<R: Rng + ?Sized>(
    state: &mut TrainState,
    sampler: &PatchSampler<'_>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    rng: &mut R,
    clock: &dyn Fn() -> f64,
) -> Result<Vec<TrainLogEntry>> {
    let epoch = state.epoch;
    let curriculum_p = curriculum_probability(epoch, &sampler.config().curriculum);
    let mut log = Vec::with_capacity(train_cfg.batches_per_epoch);
    for batch in 0..train_cfg.batches_per_epoch {
        let patches = sampler.make_batch(train_cfg.batch_size, epoch, rng)?;
        let mut g = batch_gradients(&state.model, &state.logvars, &patches, loss_cfg, rng, (epoch, batch))?;
        let grad_norm = clip_global_norm(&mut g.grads, &mut g.d_logvars, train_cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite { what: format!("gradient norm at epoch {epoch}, batch {batch}") });
        }
        state.optimizer.step(state.model.params_mut(), &g.grads, &mut state.logvars, &g.d_logvars);
        log.push(TrainLogEntry {
            epoch,
            batch,
            step: state.optimizer.steps,
            total_loss: g.total_loss,
            task_losses: g.task_losses,
            logvars: state.logvars.s,
            curriculum_p,
            grad_norm,
            wall_time_s: clock(),
        });
    }
    state.epoch += 1;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn patch(months: usize, size: usize, f: impl Fn(usize, usize) -> f32) -> PatchSequence {
        let len = N_TYPES * size * size;
        let inputs = (0..months).flat_map(|t| (0..len).map(move |i| (t, i))).map(|(t, i)| f(t, i)).collect();
        PatchSequence { inputs, channels: N_TYPES, size, origin: (0, 0), source_month_ids: (0..months as u32).collect() }
    }

    #[test]
    fn targets_shift_by_one_month() {
        let p = patch(2, 4, |t, i| if t == 1 && i == 5 { 1.5 } else { 0.0 });
        let (reg, cls) = compute_targets(&p).unwrap();
        assert_eq!(reg.len(), 3 * 16);
        assert_eq!(reg[5], 1.5);
        assert_eq!(cls[5], 1.0);
        assert_eq!(cls.iter().sum::<f32>(), 1.0);
        for (r, c) in reg.iter().zip(&cls) {
            assert_eq!(*c, presence(*r));
        }
        assert!(compute_targets(&patch(1, 4, |_, _| 0.0)).is_err());
        let (zr, zc) = compute_targets(&patch(5, 4, |_, _| 0.0)).unwrap();
        assert!(zr.iter().chain(&zc).all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_reach_every_decoder_and_log_variance() {
        let cfg = ModelConfig { levels: 2, base_filters: 4, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model: HydraNet<f32> = HydraNet::new(cfg, &mut rng).unwrap();
        let patches: Vec<PatchSequence> = (0..2)
            .map(|b| patch(4, 8, move |t, i| if (i + t + b) % 7 == 0 { 1.0 } else { 0.0 }))
            .collect();
        let g = batch_gradients(&model, &TaskLogVariances::default(), &patches, &LossConfig::default(), &mut rng, (0, 0))
            .unwrap();
        for h in 0..N_HEADS {
            let norm: f64 = model
                .decoder_params(h)
                .iter()
                .flat_map(|&id| g.grads.get(id).iter())
                .map(|v| (*v as f64) * (*v as f64))
                .sum();
            assert!(norm > 0.0, "decoder {h} received no gradient");
            assert!(g.d_logvars[h] != 0.0);
        }
        let encoder_norm: f64 = model
            .params()
            .entries()
            .iter()
            .zip(&g.grads.values)
            .filter(|(p, _)| p.name.starts_with("enc") || p.name.starts_with("lstm"))
            .flat_map(|(_, g)| g.iter())
            .map(|v| (*v as f64).powi(2))
            .sum();
        assert!(encoder_norm > 0.0);
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let cfg = ModelConfig { levels: 1, base_filters: 2, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: HydraNet<f32> = HydraNet::new(cfg, &mut rng).unwrap();
        let patches = vec![patch(3, 4, |_, _| 0.0), patch(4, 4, |_, _| 0.0)];
        assert!(batch_gradients(&model, &TaskLogVariances::default(), &patches, &LossConfig::default(), &mut rng, (0, 0))
            .is_err());
    }
}
