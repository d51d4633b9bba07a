//! Curriculum-biased spatial patch sampling over the training span.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ZStackVolume;

/// Probability of drawing a violence-bearing patch, ramped linearly over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub p_start: f64,
    pub p_end: f64,
    /// Epoch at which `p_end` is reached; `None` means the total epoch count.
    pub ramp_epochs: Option<usize>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { p_start: 0.95, p_end: 0.50, ramp_epochs: None }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_end && self.p_end <= self.p_start && self.p_start <= 1.0) {
            return Err(Error::Config(format!(
                "curriculum needs 0 <= p_end <= p_start <= 1, got p_start={} p_end={}",
                self.p_start, self.p_end
            )));
        }
        Ok(())
    }

    /// Resolves `ramp_epochs` against the run length.
    pub fn with_total_epochs(mut self, epochs: usize) -> Self {
        self.ramp_epochs.get_or_insert(epochs);
        self
    }
}

/// Linear interpolation from `p_start` at epoch 0 to `p_end` at `ramp_epochs`, clamped afterwards.
pub fn curriculum_probability(epoch: usize, schedule: &CurriculumSchedule) -> f64 {
    let ramp = schedule.ramp_epochs.unwrap_or(0);
    if epoch >= ramp {
        return schedule.p_end;
    }
    let frac = epoch as f64 / ramp as f64;
    schedule.p_start + (schedule.p_end - schedule.p_start) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub patch_size: usize,
    /// Random temporal window length; `None` trains on the full training span.
    pub temporal_crop: Option<usize>,
    pub curriculum: CurriculumSchedule,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { patch_size: 32, temporal_crop: None, curriculum: CurriculumSchedule::default() }
    }
}

/// One spatial patch across (a window of) the training months.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    /// `[T × C × size × size]`, row-major.
    pub inputs: Vec<f32>,
    pub channels: usize,
    pub size: usize,
    /// `(row, col)` of the patch corner.
    pub origin: (usize, usize),
    pub source_month_ids: Vec<u32>,
}

impl PatchSequence {
    pub fn months(&self) -> usize {
        self.source_month_ids.len()
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frame_len();
        &self.inputs[t * len..(t + 1) * len]
    }
}

/// Patch sampler with the activity map of a training volume precomputed.
#[derive(Debug, Clone)]
pub struct PatchSampler<'a> {
    volume: &'a ZStackVolume,
    config: SamplerConfig,
    /// Corners whose patch contains at least one cell active in any channel and month.
    active_corners: Vec<(usize, usize)>,
}

impl<'a> PatchSampler<'a> {
    pub fn new(volume: &'a ZStackVolume, config: SamplerConfig) -> Result<Self> {
        config.curriculum.validate()?;
        let p = config.patch_size;
        let (h, w) = (volume.height(), volume.width());
        if p == 0 || h < p || w < p {
            return Err(Error::Shape(format!("volume {h}x{w} is smaller than patch size {p}")));
        }
        if volume.months() == 0 {
            return Err(Error::Shape("cannot sample patches from an empty volume".into()));
        }
        if let Some(crop) = config.temporal_crop {
            if crop == 0 || crop > volume.months() {
                return Err(Error::Config(format!("temporal_crop {crop} outside 1..={}", volume.months())));
            }
        }
        // 2-D prefix sums over the any-channel, any-month activity indicator
        let plane = h * w;
        let mut active = vec![false; plane];
        for t in 0..volume.months() {
            for chunk in volume.frame(t).chunks(plane) {
                for (a, &v) in active.iter_mut().zip(chunk) {
                    *a |= v > 0.0;
                }
            }
        }
        let mut prefix = vec![0u32; (h + 1) * (w + 1)];
        for r in 0..h {
            for c in 0..w {
                prefix[(r + 1) * (w + 1) + c + 1] = u32::from(active[r * w + c]) + prefix[r * (w + 1) + c + 1]
                    + prefix[(r + 1) * (w + 1) + c]
                    - prefix[r * (w + 1) + c];
            }
        }
        let count = |r: usize, c: usize| {
            prefix[(r + p) * (w + 1) + c + p] + prefix[r * (w + 1) + c]
                - prefix[r * (w + 1) + c + p]
                - prefix[(r + p) * (w + 1) + c]
        };
        let mut active_corners = Vec::new();
        for r in 0..=h - p {
            for c in 0..=w - p {
                if count(r, c) > 0 {
                    active_corners.push((r, c));
                }
            }
        }
        Ok(PatchSampler { volume, config, active_corners })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn active_corner_count(&self) -> usize {
        self.active_corners.len()
    }

    /// Corner for this draw: violence-bearing with the curriculum probability, else uniform.
    pub fn sample_corner<R: Rng + ?Sized>(&self, epoch: usize, rng: &mut R) -> (usize, usize) {
        let p = self.config.patch_size;
        let prob = curriculum_probability(epoch, &self.config.curriculum);
        let biased = rng.gen::<f64>() < prob;
        if biased && !self.active_corners.is_empty() {
            self.active_corners[rng.gen_range(0..self.active_corners.len())]
        } else {
            (rng.gen_range(0..=self.volume.height() - p), rng.gen_range(0..=self.volume.width() - p))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, epoch: usize, rng: &mut R) -> PatchSequence {
        let origin = self.sample_corner(epoch, rng);
        let months = self.volume.months();
        let (start, len) = match self.config.temporal_crop {
            Some(crop) => (rng.gen_range(0..=months - crop), crop),
            None => (0, months),
        };
        self.extract(origin, start..start + len)
    }

    /// Copies the patch at `origin` for month indices `range`.
    pub fn extract(&self, origin: (usize, usize), range: core::ops::Range<usize>) -> PatchSequence {
        let p = self.config.patch_size;
        let v = self.volume;
        let (c, w) = (v.channels(), v.width());
        let plane = v.height() * w;
        let mut inputs = Vec::with_capacity(range.len() * c * p * p);
        for t in range.clone() {
            let frame = v.frame(t);
            for ch in 0..c {
                for r in origin.0..origin.0 + p {
                    let start = ch * plane + r * w + origin.1;
                    inputs.extend_from_slice(&frame[start..start + p]);
                }
            }
        }
        PatchSequence { inputs, channels: c, size: p, origin, source_month_ids: v.month_ids()[range].to_vec() }
    }

    pub fn make_batch<R: Rng + ?Sized>(&self, batch_size: usize, epoch: usize, rng: &mut R) -> Result<Vec<PatchSequence>> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok((0..batch_size).map(|_| self.sample(epoch, rng)).collect())
    }
}

/// One-shot patch draw; builds the activity map on every call.
pub fn sample_patch<R: Rng + ?Sized>(
    volume: &ZStackVolume,
    epoch: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<PatchSequence> {
    Ok(PatchSampler::new(volume, *config)?.sample(epoch, rng))
}

pub fn make_batch<R: Rng + ?Sized>(
    volume: &ZStackVolume,
    batch_size: usize,
    epoch: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<PatchSequence>> {
    PatchSampler::new(volume, *config)?.make_batch(batch_size, epoch, rng)
}
