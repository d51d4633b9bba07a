//! Posterior forecasting: deterministic warm-up, then MC-dropout rollouts that
//! feed the regression heads back as inputs while the cell state stays frozen.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{HeadOutputs, HydraNet, Mode, RecurrentState};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::volume::ZStackVolume;
use crate::{N_HEADS, N_TYPES};

/// Posterior samples `[S × horizon × 6 × H × W]`, heads in `HEAD_NAMES` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCube {
    pub samples: Vec<f32>,
    pub n_samples: usize,
    pub horizon: usize,
    pub height: usize,
    pub width: usize,
    pub first_forecast_month_id: u32,
}

impl ForecastCube {
    pub fn trajectory_len(&self) -> usize {
        self.horizon * N_HEADS * self.height * self.width
    }

    pub fn sample(&self, s: usize) -> &[f32] {
        let len = self.trajectory_len();
        &self.samples[s * len..(s + 1) * len]
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.n_samples * self.trajectory_len() {
            return Err(Error::Shape(format!(
                "cube holds {} values, expected {}",
                self.samples.len(),
                self.n_samples * self.trajectory_len()
            )));
        }
        let plane = self.height * self.width;
        for (i, chunk) in self.samples.chunks(plane.max(1)).enumerate() {
            let head = i % N_HEADS;
            let ok = chunk.iter().all(|&v| v.is_finite() && v >= 0.0 && (head < N_TYPES || v <= 1.0));
            if !ok {
                return Err(Error::InvalidValue(format!("cube values out of range on head {head}")));
            }
        }
        Ok(())
    }
}

/// Per-cell statistics over the sample axis, each `[horizon × 6 × H × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub horizon: usize,
    pub height: usize,
    pub width: usize,
    pub first_forecast_month_id: u32,
    pub mean: Vec<f32>,
    /// Population standard deviation.
    pub std: Vec<f32>,
    pub quantiles: Vec<(f64, Vec<f32>)>,
}

impl ForecastSummary {
    pub fn quantile(&self, q: f64) -> Option<&[f32]> {
        self.quantiles.iter().find(|(p, _)| (*p - q).abs() < 1e-12).map(|(_, v)| v.as_slice())
    }
}

/// Month `t` of a volume as a `[1 × C × H × W]` tensor.
pub fn volume_frame<F: Real>(volume: &ZStackVolume, t: usize) -> Tensor<F> {
    let data = volume.frame(t).iter().map(|&v| F::of(v as f64)).collect();
    Tensor::from_vec([1, volume.channels(), volume.height(), volume.width()], data).expect("frame shape")
}

/// Runs the model deterministically over every month of `observed` and returns the final state.
pub fn warmup<F: Real>(model: &HydraNet<F>, observed: &ZStackVolume) -> Result<RecurrentState<F>> {
    if observed.months() == 0 {
        return Err(Error::Shape("warm-up needs at least one observed month".into()));
    }
    let mut state = model.init_state(1, observed.height(), observed.width())?;
    let mut unused = NoRng;
    for t in 0..observed.months() {
        let (_, next) = model.step(&volume_frame(observed, t), &state, Mode::Deterministic, &mut unused)?;
        state = next;
    }
    Ok(state)
}

/// Autoregressive rollout with the cell state pinned to its warm-up value.
#[derive(Debug, Clone)]
pub struct Rollout<'m, F> {
    model: &'m HydraNet<F>,
    state: RecurrentState<F>,
    frozen_cells: Vec<Tensor<F>>,
    input: Tensor<F>,
    steps: usize,
}

impl<'m, F: Real> Rollout<'m, F> {
    /// Starts from a warmed-up state; `first_input` is the last observed month.
    pub fn new(model: &'m HydraNet<F>, warm: &RecurrentState<F>, first_input: Tensor<F>) -> Self {
        Rollout {
            model,
            state: warm.clone(),
            frozen_cells: warm.levels.iter().map(|l| l.cell.clone()).collect(),
            input: first_input,
            steps: 0,
        }
    }

    pub fn state(&self) -> &RecurrentState<F> {
        &self.state
    }

    /// One MC-dropout step; the regression outputs become the next input.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<HeadOutputs<F>> {
        let (out, mut next) = self.model.step(&self.input, &self.state, Mode::McInference, rng)?;
        if !out.reg.all_finite() || !out.cls.all_finite() {
            return Err(Error::NonFiniteForecast { step: self.steps });
        }
        for (level, frozen) in next.levels.iter_mut().zip(&self.frozen_cells) {
            level.cell.clone_from(frozen);
        }
        self.state = next;
        self.input = out.reg.clone();
        self.steps += 1;
        Ok(out)
    }
}

/// `horizon` autoregressive months as `[horizon × 6 × H × W]`.
pub fn rollout_one_sample<F: Real, R: Rng + ?Sized>(
    model: &HydraNet<F>,
    warm: &RecurrentState<F>,
    first_input: &Tensor<F>,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let [_, _, h, w] = first_input.shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(horizon * N_HEADS * plane);
    let mut roll = Rollout::new(model, warm, first_input.clone());
    for _ in 0..horizon {
        let step = roll.advance(rng)?;
        for head in 0..N_HEADS {
            let src = if head < N_TYPES { step.reg.plane(0, head) } else { step.cls.plane(0, head - N_TYPES) };
            out.extend(src.iter().map(|v| v.f64() as f32));
        }
    }
    Ok(out)
}

/// Random stream of posterior sample `index`: the seed picks the key, the index the stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Warm up on all observed months but the last, then draw `n_samples` independent rollouts.
///
/// Each rollout starts by ingesting the last observed month, so its first output is
/// the forecast for the month after `observed`.
pub fn forecast_posterior<F: Real>(
    model: &HydraNet<F>,
    observed: &ZStackVolume,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ForecastCube> {
    let months = observed.months();
    if months == 0 {
        return Err(Error::Shape("cannot forecast from an empty volume".into()));
    }
    let warm = if months > 1 {
        warmup(model, &observed.slice_months(0..months - 1))?
    } else {
        model.init_state(1, observed.height(), observed.width())?
    };
    let last = volume_frame(observed, months - 1);
    let mut samples = Vec::with_capacity(n_samples * horizon * N_HEADS * observed.height() * observed.width());
    for s in 0..n_samples {
        samples.extend(rollout_one_sample(model, &warm, &last, horizon, &mut sample_rng(seed, s))?);
    }
    Ok(ForecastCube {
        samples,
        n_samples,
        horizon,
        height: observed.height(),
        width: observed.width(),
        first_forecast_month_id: observed.month_ids()[months - 1] + 1,
    })
}

/// Teacher-forced deterministic predictions over a volume: `outputs[t]` predicts month `t + 1`.
pub fn one_step_predictions<F: Real>(model: &HydraNet<F>, volume: &ZStackVolume) -> Result<Vec<HeadOutputs<F>>> {
    let mut state = model.init_state(1, volume.height(), volume.width())?;
    let mut outputs = Vec::with_capacity(volume.months());
    for t in 0..volume.months() {
        let (out, next) = model.step(&volume_frame(volume, t), &state, Mode::Deterministic, &mut NoRng)?;
        outputs.push(out);
        state = next;
    }
    Ok(outputs)
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = math::ceil(pos) as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean, population standard deviation and the requested quantiles over the sample axis.
pub fn summarize(cube: &ForecastCube, quantiles: &[f64]) -> Result<ForecastSummary> {
    if cube.n_samples == 0 {
        return Err(Error::Shape("cannot summarize a cube without samples".into()));
    }
    if let Some(q) = quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::InvalidValue(format!("quantile {q} outside [0, 1]")));
    }
    let len = cube.trajectory_len();
    if cube.samples.len() != cube.n_samples * len {
        return Err(Error::Shape("cube payload does not match its shape".into()));
    }
    let s = cube.n_samples;
    let mut mean = vec![0.0f32; len];
    let mut std = vec![0.0f32; len];
    let mut qs: Vec<(f64, Vec<f32>)> = quantiles.iter().map(|&q| (q, vec![0.0f32; len])).collect();
    let mut column = vec![0.0f64; s];
    for i in 0..len {
        for (k, v) in column.iter_mut().enumerate() {
            *v = cube.samples[k * len + i] as f64;
        }
        // sorted first so every statistic is independent of sample order
        column.sort_by(|a, b| a.total_cmp(b));
        let m = column.iter().sum::<f64>() / s as f64;
        let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s as f64;
        mean[i] = m as f32;
        std[i] = math::sqrt(var) as f32;
        for (q, out) in qs.iter_mut() {
            out[i] = quantile_sorted(&column, *q) as f32;
        }
    }
    Ok(ForecastSummary {
        horizon: cube.horizon,
        height: cube.height,
        width: cube.width,
        first_forecast_month_id: cube.first_forecast_month_id,
        mean,
        std,
        quantiles: qs,
    })
}

/// Random source for deterministic passes; never consulted because no masks are drawn.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic pass drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic pass drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("deterministic pass drew a random number")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> core::result::Result<(), rand::Error> {
        unreachable!("deterministic pass drew a random number")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(values: &[[f32; 2]]) -> ForecastCube {
        // one month, one row, two cells, six heads: values[s] fills every head
        let samples = values.iter().flat_map(|v| (0..N_HEADS).flat_map(move |_| v.iter().copied())).collect();
        ForecastCube { samples, n_samples: values.len(), horizon: 1, height: 1, width: 2, first_forecast_month_id: 5 }
    }

    #[test]
    fn single_sample_summary() {
        let c = cube(&[[0.3, 0.7]]);
        let s = summarize(&c, &[0.05, 0.5]).unwrap();
        assert_eq!(s.mean, c.samples);
        assert!(s.std.iter().all(|&v| v == 0.0));
        assert_eq!(s.quantile(0.05).unwrap(), c.samples.as_slice());
    }

    #[test]
    fn constant_samples_have_constant_quantiles() {
        let s = summarize(&cube(&[[0.4, 0.4]; 5]), &[0.0, 0.05, 0.5, 0.95, 1.0]).unwrap();
        for (_, q) in &s.quantiles {
            assert!(q.iter().all(|&v| v == 0.4));
        }
    }

    #[test]
    fn binary_samples_use_population_std() {
        let s = summarize(&cube(&[[0.0, 1.0], [1.0, 0.0]]), &[]).unwrap();
        assert!(s.mean.iter().all(|&v| v == 0.5));
        assert!(s.std.iter().all(|&v| v == 0.5));
        assert!(s.quantiles.is_empty());
    }

    #[test]
    fn summary_rejects_bad_input() {
        assert!(summarize(&cube(&[]), &[]).is_err());
        assert!(summarize(&cube(&[[0.1, 0.2]]), &[1.5]).is_err());
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let sorted = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.0);
        assert!((quantile_sorted(&sorted, 0.05) - 0.2).abs() < 1e-12);
        assert_eq!(quantile_sorted(&sorted, 1.0), 4.0);
    }
}
