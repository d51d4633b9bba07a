//! Focal loss (classification), shrinkage loss (regression) and their
//! uncertainty-weighted multi-task combination.
//!
//! Losses are mean-reduced and accumulated in `f64`; gradient variants return
//! `d loss / d prediction` per element, already divided by the element count.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::real::Real;
use crate::N_HEADS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub shrink_a: f64,
    pub shrink_c: f64,
    /// Multiply the shrinkage term by `exp(target)`; off by default.
    pub shrink_weighted: bool,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { focal_alpha: 0.25, focal_gamma: 2.0, shrink_a: 10.0, shrink_c: 0.2, shrink_weighted: false, eps: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_alpha > 0.0
            && self.focal_alpha < 1.0
            && self.focal_gamma >= 0.0
            && self.shrink_a > 0.0
            && self.shrink_c > 0.0
            && self.eps > 0.0
            && self.eps < 0.5;
        if !ok {
            return Err(Error::Config(format!("loss parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Learned log-variances `s`, one per head in `HEAD_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskLogVariances {
    pub s: [f64; N_HEADS],
}

fn check_shapes(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("prediction has {a} elements, target has {b}")));
    }
    Ok(())
}

#[inline]
fn focal_term(p: f64, y: f64, cfg: &LossConfig) -> (f64, f64) {
    let (alpha, gamma) = (cfg.focal_alpha, cfg.focal_gamma);
    let clamped = p < cfg.eps || p > 1.0 - cfg.eps;
    let p = p.clamp(cfg.eps, 1.0 - cfg.eps);
    let q = 1.0 - p;
    let (lp, lq) = (math::ln(p), math::ln(q));
    let (qg, pg) = (math::powf(q, gamma), math::powf(p, gamma));
    let loss = -alpha * y * qg * lp - (1.0 - alpha) * (1.0 - y) * pg * lq;
    if clamped {
        return (loss, 0.0);
    }
    let dpos = if gamma == 0.0 { -1.0 / p } else { gamma * math::powf(q, gamma - 1.0) * lp - qg / p };
    let dneg = if gamma == 0.0 { 1.0 / q } else { -gamma * math::powf(p, gamma - 1.0) * lq + pg / q };
    (loss, alpha * y * dpos + (1.0 - alpha) * (1.0 - y) * dneg)
}

/// Mean of `-α·y·(1-p)^γ·ln p - (1-α)·(1-y)·p^γ·ln(1-p)`, with `p` clamped to `[eps, 1-eps]`.
pub fn focal_loss<F: Real>(p: &[F], y: &[F], cfg: &LossConfig) -> Result<f64> {
    check_shapes(p.len(), y.len())?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = p.iter().zip(y).map(|(&p, &y)| focal_term(p.f64(), y.f64(), cfg).0).sum();
    Ok(sum / p.len() as f64)
}

/// Focal loss and its gradient w.r.t. `p` (zero where the clamp is active).
pub fn focal_loss_grad<F: Real>(p: &[F], y: &[F], cfg: &LossConfig) -> Result<(f64, Vec<F>)> {
    check_shapes(p.len(), y.len())?;
    let n = p.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let (l, g) = focal_term(p.f64(), y.f64(), cfg);
            sum += l;
            F::of(g / n)
        })
        .collect();
    Ok((sum / n, grad))
}

#[inline]
fn shrinkage_term(pred: f64, target: f64, cfg: &LossConfig) -> (f64, f64) {
    let diff = pred - target;
    let l = math::abs(diff);
    // 1 / (1 + exp(a (c - l))) written as a logistic in a (l - c)
    let z = cfg.shrink_a * (l - cfg.shrink_c);
    let s = if z >= 0.0 { 1.0 / (1.0 + math::exp(-z)) } else { math::exp(z) / (1.0 + math::exp(z)) };
    let weight = if cfg.shrink_weighted { math::exp(target) } else { 1.0 };
    let loss = weight * l * l * s;
    let dl = weight * (2.0 * l * s + l * l * cfg.shrink_a * s * (1.0 - s));
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    (loss, dl * sign)
}

/// Mean of `l² / (1 + exp(a·(c - l)))` with `l = |y - ŷ|`.
pub fn shrinkage_loss<F: Real>(pred: &[F], target: &[F], cfg: &LossConfig) -> Result<f64> {
    check_shapes(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(target).map(|(&p, &t)| shrinkage_term(p.f64(), t.f64(), cfg).0).sum();
    Ok(sum / pred.len() as f64)
}

/// Shrinkage loss and its gradient w.r.t. the prediction.
pub fn shrinkage_loss_grad<F: Real>(pred: &[F], target: &[F], cfg: &LossConfig) -> Result<(f64, Vec<F>)> {
    check_shapes(pred.len(), target.len())?;
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (l, g) = shrinkage_term(p.f64(), t.f64(), cfg);
            sum += l;
            F::of(g / n)
        })
        .collect();
    Ok((sum / n, grad))
}

/// `Σ exp(-sᵢ)·Lᵢ + sᵢ`.
pub fn multitask_combine(losses: &[f64; N_HEADS], logvars: &TaskLogVariances) -> Result<f64> {
    Ok(multitask_combine_grad(losses, logvars)?.0)
}

/// Combined loss with gradients `(d/dLᵢ, d/dsᵢ)`.
pub fn multitask_combine_grad(
    losses: &[f64; N_HEADS],
    logvars: &TaskLogVariances,
) -> Result<(f64, [f64; N_HEADS], [f64; N_HEADS])> {
    if losses.iter().chain(&logvars.s).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: format!("multi-task input {losses:?} / {:?}", logvars.s) });
    }
    let mut total = 0.0;
    let mut d_loss = [0.0; N_HEADS];
    let mut d_s = [0.0; N_HEADS];
    for i in 0..N_HEADS {
        let w = math::exp(-logvars.s[i]);
        total += w * losses[i] + logvars.s[i];
        d_loss[i] = w;
        d_s[i] = 1.0 - w * losses[i];
    }
    Ok((total, d_loss, d_s))
}
