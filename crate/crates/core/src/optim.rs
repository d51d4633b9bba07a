//! First-order optimizers over a [`ParamStore`] plus the task log-variances.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::TaskLogVariances;
use crate::math;
use crate::nn::{Grads, ParamStore};
use crate::real::Real;
use crate::N_HEADS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdamLike,
    Sgd,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state. Moments are kept in `f32` so checkpoints restore them bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub steps: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub m_logvar: [f64; N_HEADS],
    pub v_logvar: [f64; N_HEADS],
}

impl Optimizer {
    pub fn new<F: Real>(kind: OptimizerKind, learning_rate: f64, params: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f32>> = params.entries().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Optimizer {
            kind,
            learning_rate,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
            m_logvar: [0.0; N_HEADS],
            v_logvar: [0.0; N_HEADS],
        }
    }

    /// Applies one update in place.
    pub fn step<F: Real>(
        &mut self,
        params: &mut ParamStore<F>,
        grads: &Grads<F>,
        logvars: &mut TaskLogVariances,
        d_logvars: &[f64; N_HEADS],
    ) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.entries_mut().iter_mut().zip(&grads.values) {
                    for (w, &gi) in p.value.iter_mut().zip(g) {
                        *w = F::of(w.f64() - lr * gi.f64());
                    }
                }
                for (s, g) in logvars.s.iter_mut().zip(d_logvars) {
                    *s -= lr * g;
                }
            }
            OptimizerKind::AdamLike => {
                let t = self.steps as f64;
                let bc1 = 1.0 - math::powf(BETA1, t);
                let bc2 = 1.0 - math::powf(BETA2, t);
                let step_size = lr / bc1;
                for ((p, g), (m, v)) in
                    params.entries_mut().iter_mut().zip(&grads.values).zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (((w, &gi), mi), vi) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let gi = gi.f64();
                        let m_new = BETA1 * *mi as f64 + (1.0 - BETA1) * gi;
                        let v_new = BETA2 * *vi as f64 + (1.0 - BETA2) * gi * gi;
                        *mi = m_new as f32;
                        *vi = v_new as f32;
                        let denom = math::sqrt(v_new / bc2) + ADAM_EPS;
                        *w = F::of(w.f64() - step_size * m_new / denom);
                    }
                }
                for i in 0..N_HEADS {
                    let gi = d_logvars[i];
                    self.m_logvar[i] = BETA1 * self.m_logvar[i] + (1.0 - BETA1) * gi;
                    self.v_logvar[i] = BETA2 * self.v_logvar[i] + (1.0 - BETA2) * gi * gi;
                    let denom = math::sqrt(self.v_logvar[i] / bc2) + ADAM_EPS;
                    logvars.s[i] -= step_size * self.m_logvar[i] / denom;
                }
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut Grads<F>, d_logvars: &mut [f64; N_HEADS], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.sq_norm() + d_logvars.iter().map(|g| g * g).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.scale(F::of(s));
        d_logvars.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
