//! Seeded synthetic event generators with known structure.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::volume::{EventRecord, GridSpec};
use crate::N_TYPES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthKind {
    /// A `size × size` square on `sb` moving by `velocity` (rows, cols) per month with wrap-around.
    MovingBlob { size: usize, velocity: (i32, i32), origin: (usize, usize), fatalities: u64 },
    /// Independent contact process per violence type with geometric fatality counts.
    Diffusion {
        /// Probability that an active cell stays active.
        persistence: f64,
        /// Probability that an active cell ignites each 4-neighbour.
        spread: f64,
        /// Probability that any cell ignites on its own.
        ignition: f64,
        /// Fraction of cells active in the first month.
        initial_fraction: f64,
        /// Mean of the geometric fatality count (support starts at 1).
        mean_fatalities: f64,
    },
    /// `count` fixed random cells on `sb` emitting `fatalities` every month.
    StaticHotspots { count: usize, fatalities: u64 },
}

impl SynthKind {
    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::MovingBlob { .. } => "moving_blob",
            SynthKind::Diffusion { .. } => "diffusion",
            SynthKind::StaticHotspots { .. } => "static_hotspots",
        }
    }

    pub fn moving_blob() -> Self {
        SynthKind::MovingBlob { size: 4, velocity: (0, 1), origin: (0, 0), fatalities: 25 }
    }

    pub fn diffusion() -> Self {
        SynthKind::Diffusion {
            persistence: 0.7,
            spread: 0.075,
            ignition: 0.001,
            initial_fraction: 0.02,
            mean_fatalities: 8.0,
        }
    }

    pub fn static_hotspots() -> Self {
        SynthKind::StaticHotspots { count: 5, fatalities: 10 }
    }

    /// Default parameters for a kind name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "moving_blob" => Some(Self::moving_blob()),
            "diffusion" => Some(Self::diffusion()),
            "static_hotspots" => Some(Self::static_hotspots()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub height: usize,
    pub width: usize,
    pub months: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, height: usize, width: usize, months: usize, seed: u64) -> Self {
        SynthSpec { kind, height, width, months, seed }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::with_size(self.height, self.width)
    }

    /// Month ids covered by the generated table.
    pub fn month_range(&self) -> core::ops::RangeInclusive<u32> {
        0..=(self.months as u32).saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.months == 0 {
            return Err(Error::Config(format!(
                "synthetic dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.months
            )));
        }
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        match self.kind {
            SynthKind::MovingBlob { size, origin, .. } => {
                if size == 0 || size > self.height || size > self.width {
                    return Err(Error::Config(format!(
                        "blob of size {size} does not fit a {}x{} grid",
                        self.height, self.width
                    )));
                }
                if origin.0 >= self.height || origin.1 >= self.width {
                    return Err(Error::Config(format!("blob origin {origin:?} outside the grid")));
                }
            }
            SynthKind::Diffusion { persistence, spread, ignition, initial_fraction, mean_fatalities } => {
                prob("persistence", persistence)?;
                prob("spread", spread)?;
                prob("ignition", ignition)?;
                prob("initial_fraction", initial_fraction)?;
                if !(mean_fatalities >= 1.0 && mean_fatalities.is_finite()) {
                    return Err(Error::Config(format!("mean_fatalities must be >= 1, got {mean_fatalities}")));
                }
            }
            SynthKind::StaticHotspots { count, .. } => {
                if count > self.height * self.width {
                    return Err(Error::Config(format!(
                        "{count} hotspots do not fit a {}x{} grid",
                        self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates the event table for `spec`; a pure function of its argument.
pub fn generate(spec: &SynthSpec) -> Result<Vec<EventRecord>> {
    spec.validate()?;
    Ok(match spec.kind {
        SynthKind::MovingBlob { .. } => moving_blob(spec)?,
        SynthKind::Diffusion { .. } => diffusion(spec)?,
        SynthKind::StaticHotspots { .. } => static_hotspots(spec)?,
    })
}

/// Top-left corner of the blob in month `t`.
pub fn blob_origin_at(spec: &SynthSpec, t: usize) -> Option<(usize, usize)> {
    let SynthKind::MovingBlob { velocity, origin, .. } = spec.kind else {
        return None;
    };
    let wrap = |start: usize, v: i32, n: usize| (start as i64 + v as i64 * t as i64).rem_euclid(n as i64) as usize;
    Some((wrap(origin.0, velocity.0, spec.height), wrap(origin.1, velocity.1, spec.width)))
}

fn sb_record(row: usize, col: usize, month_id: u32, fatalities: u64) -> EventRecord {
    EventRecord { row, col, month_id, fatalities_sb: fatalities, fatalities_ns: 0, fatalities_os: 0 }
}

pub fn moving_blob(spec: &SynthSpec) -> Result<Vec<EventRecord>> {
    spec.validate()?;
    let SynthKind::MovingBlob { size, fatalities, .. } = spec.kind else {
        return Err(Error::Config(format!("expected moving_blob, got {}", spec.kind.name())));
    };
    let mut out = Vec::with_capacity(spec.months * size * size);
    for t in 0..spec.months {
        let (r0, c0) = blob_origin_at(spec, t).expect("moving blob");
        for dr in 0..size {
            for dc in 0..size {
                out.push(sb_record((r0 + dr) % spec.height, (c0 + dc) % spec.width, t as u32, fatalities));
            }
        }
    }
    Ok(out)
}

/// Geometric draw on `1, 2, ...` with the given mean.
fn geometric<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 1.0 {
        return 1;
    }
    let q = 1.0 - 1.0 / mean;
    let u: f64 = 1.0 - rng.gen::<f64>();
    1 + math::floor(math::ln(u) / math::ln(q)) as u64
}

pub fn diffusion(spec: &SynthSpec) -> Result<Vec<EventRecord>> {
    spec.validate()?;
    let SynthKind::Diffusion { persistence, spread, ignition, initial_fraction, mean_fatalities } = spec.kind else {
        return Err(Error::Config(format!("expected diffusion, got {}", spec.kind.name())));
    };
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut active: Vec<Vec<bool>> =
        (0..N_TYPES).map(|_| (0..h * w).map(|_| rng.gen_bool(initial_fraction)).collect()).collect();
    let mut counts = vec![[0u64; N_TYPES]; h * w];
    let mut out = Vec::new();
    for t in 0..spec.months {
        if t > 0 {
            for channel in active.iter_mut() {
                let mut next = vec![false; h * w];
                for i in 0..h * w {
                    if channel[i] && rng.gen_bool(persistence) {
                        next[i] = true;
                    }
                }
                for r in 0..h {
                    for c in 0..w {
                        if !channel[r * w + c] {
                            continue;
                        }
                        let neighbours = [
                            (r > 0).then(|| (r - 1) * w + c),
                            (r + 1 < h).then(|| (r + 1) * w + c),
                            (c > 0).then(|| r * w + c - 1),
                            (c + 1 < w).then(|| r * w + c + 1),
                        ];
                        for j in neighbours.into_iter().flatten() {
                            if rng.gen_bool(spread) {
                                next[j] = true;
                            }
                        }
                    }
                }
                for cell in next.iter_mut() {
                    if rng.gen_bool(ignition) {
                        *cell = true;
                    }
                }
                *channel = next;
            }
        }
        for (i, cell) in counts.iter_mut().enumerate() {
            for (k, channel) in active.iter().enumerate() {
                cell[k] = if channel[i] { geometric(&mut rng, mean_fatalities) } else { 0 };
            }
            if cell.iter().any(|&n| n > 0) {
                out.push(EventRecord {
                    row: i / w,
                    col: i % w,
                    month_id: t as u32,
                    fatalities_sb: cell[0],
                    fatalities_ns: cell[1],
                    fatalities_os: cell[2],
                });
            }
        }
    }
    Ok(out)
}

pub fn static_hotspots(spec: &SynthSpec) -> Result<Vec<EventRecord>> {
    spec.validate()?;
    let SynthKind::StaticHotspots { count, fatalities } = spec.kind else {
        return Err(Error::Config(format!("expected static_hotspots, got {}", spec.kind.name())));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells = index::sample(&mut rng, spec.height * spec.width, count).into_vec();
    cells.sort_unstable();
    let mut out = Vec::with_capacity(count * spec.months);
    if fatalities == 0 {
        return Ok(out);
    }
    for t in 0..spec.months {
        out.extend(cells.iter().map(|&i| sb_record(i / spec.width, i % spec.width, t as u32, fatalities)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::build_volume;

    fn blob(velocity: (i32, i32)) -> SynthSpec {
        SynthSpec::new(
            SynthKind::MovingBlob { size: 3, velocity, origin: (2, 5), fatalities: 9 },
            10,
            8,
            12,
            0,
        )
    }

    #[test]
    fn blob_moves_one_column_per_month() {
        let spec = blob((0, 1));
        let events = moving_blob(&spec).unwrap();
        for t in 0..spec.months {
            let cols: Vec<usize> = events.iter().filter(|e| e.month_id == t as u32).map(|e| e.col).collect();
            let c0 = (5 + t) % 8;
            assert!(cols.contains(&c0));
            assert!(cols.contains(&((c0 + 2) % 8)));
            assert_eq!(cols.len(), 9);
        }
    }

    #[test]
    fn blob_prevalence_is_area_fraction() {
        let spec = blob((1, 1));
        let v = build_volume(&moving_blob(&spec).unwrap(), &spec.grid(), spec.month_range()).unwrap();
        for t in 0..spec.months {
            let one = v.slice_months(t..t + 1);
            assert!((one.prevalence(0) - 9.0 / 80.0).abs() < 1e-12);
            assert_eq!(one.prevalence(1), 0.0);
            let total: f64 = one.frame(0)[..80].iter().map(|&x| x as f64).sum();
            assert!((total - 9.0 * (10.0f64).ln()).abs() < 1e-4);
        }
    }

    #[test]
    fn oversized_blob_is_rejected() {
        let spec = SynthSpec::new(
            SynthKind::MovingBlob { size: 9, velocity: (0, 1), origin: (0, 0), fatalities: 1 },
            8,
            8,
            3,
            0,
        );
        assert!(generate(&spec).is_err());
    }

    fn diffusion_spec(persistence: f64, spread: f64, seed: u64) -> SynthSpec {
        SynthSpec::new(
            SynthKind::Diffusion { persistence, spread, ignition: 0.0, initial_fraction: 0.1, mean_fatalities: 5.0 },
            16,
            16,
            10,
            seed,
        )
    }

    fn active_cells(events: &[EventRecord], month: u32) -> Vec<(usize, usize, [bool; 3])> {
        events
            .iter()
            .filter(|e| e.month_id == month)
            .map(|e| (e.row, e.col, e.counts().map(|n| n > 0)))
            .collect()
    }

    #[test]
    fn frozen_diffusion_keeps_its_active_set() {
        let events = diffusion(&diffusion_spec(1.0, 0.0, 3)).unwrap();
        let first = active_cells(&events, 0);
        assert!(!first.is_empty());
        for t in 1..10 {
            assert_eq!(active_cells(&events, t), first);
        }
    }

    #[test]
    fn dying_diffusion_goes_quiet() {
        let events = diffusion(&diffusion_spec(0.0, 0.0, 3)).unwrap();
        assert!(events.iter().any(|e| e.month_id == 0));
        assert!(events.iter().all(|e| e.month_id == 0));
    }

    #[test]
    fn diffusion_is_reproducible_and_heterogeneous() {
        let a = diffusion(&diffusion_spec(0.8, 0.1, 11)).unwrap();
        assert_eq!(a, diffusion(&diffusion_spec(0.8, 0.1, 11)).unwrap());
        assert_ne!(a, diffusion(&diffusion_spec(0.8, 0.1, 12)).unwrap());
        let distinct: alloc::collections::BTreeSet<u64> = a.iter().map(|e| e.fatalities_sb).collect();
        assert!(distinct.len() > 3);
    }

    #[test]
    fn geometric_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n).map(|_| geometric(&mut rng, 8.0) as f64).sum::<f64>() / n as f64;
        assert!((mean - 8.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn hotspots_are_constant() {
        let spec = SynthSpec::new(SynthKind::StaticHotspots { count: 1, fatalities: 4 }, 6, 7, 5, 9);
        let events = static_hotspots(&spec).unwrap();
        assert_eq!(events.len(), 5);
        assert!(events.iter().all(|e| (e.row, e.col) == (events[0].row, events[0].col)));
        let too_many = SynthSpec::new(SynthKind::StaticHotspots { count: 43, fatalities: 4 }, 6, 7, 5, 9);
        assert!(generate(&too_many).is_err());
    }
}
