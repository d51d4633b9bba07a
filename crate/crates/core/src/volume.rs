//! Grid-month event records and the z-stack volume built from them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::log_magnitude;
use crate::N_TYPES;

/// Default channel names of a tensorized volume, in storage order.
pub const DEFAULT_CHANNELS: [&str; N_TYPES] = ["cm_sb", "cm_ns", "cm_os"];

/// Fatalities in one grid cell and month, split by violence type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub row: usize,
    pub col: usize,
    pub month_id: u32,
    pub fatalities_sb: u64,
    pub fatalities_ns: u64,
    pub fatalities_os: u64,
}

impl EventRecord {
    pub fn counts(&self) -> [u64; N_TYPES] {
        [self.fatalities_sb, self.fatalities_ns, self.fatalities_os]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrder {
    NorthFirst,
    SouthFirst,
}

/// Calendar month anchoring `month_id == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    /// Calendar month `offset` months after this one.
    pub fn plus(self, offset: u32) -> YearMonth {
        let total = self.year as i64 * 12 + (self.month as i64 - 1) + offset as i64;
        YearMonth { year: total.div_euclid(12) as i32, month: (total.rem_euclid(12) + 1) as u8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub cell_size_deg: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub month0: YearMonth,
    pub row_order: RowOrder,
}

impl Default for GridSpec {
    /// The 180×180 half-degree window over Africa and the Middle East, months from January 1990.
    fn default() -> Self {
        GridSpec {
            height: 180,
            width: 180,
            cell_size_deg: 0.5,
            origin_lat: -37.0,
            origin_lon: -20.0,
            month0: YearMonth { year: 1990, month: 1 },
            row_order: RowOrder::SouthFirst,
        }
    }
}

impl GridSpec {
    pub fn with_size(height: usize, width: usize) -> Self {
        GridSpec { height, width, ..GridSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("grid must be non-empty, got {}x{}", self.height, self.width)));
        }
        if !(self.cell_size_deg > 0.0) {
            return Err(Error::Config(format!("cell_size_deg must be positive, got {}", self.cell_size_deg)));
        }
        if !(1..=12).contains(&self.month0.month) {
            return Err(Error::Config(format!("month0 month must be 1..=12, got {}", self.month0.month)));
        }
        Ok(())
    }

    /// Latitude/longitude of the centre of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let offset = |i: usize| (i as f64 + 0.5) * self.cell_size_deg;
        let lat = match self.row_order {
            RowOrder::SouthFirst => self.origin_lat + offset(row),
            RowOrder::NorthFirst => self.origin_lat - offset(row),
        };
        (lat, self.origin_lon + offset(col))
    }
}

/// `[months × channels × height × width]` magnitudes plus grid and calendar metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ZStackVolume {
    data: Vec<f32>,
    channel_names: Vec<String>,
    month_ids: Vec<u32>,
    grid: GridSpec,
}

impl ZStackVolume {
    pub fn new(data: Vec<f32>, channel_names: Vec<String>, month_ids: Vec<u32>, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        if channel_names.is_empty() {
            return Err(Error::Shape("volume needs at least one channel".into()));
        }
        if month_ids.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::MonthRange("month ids must be strictly increasing and contiguous".into()));
        }
        let expected = month_ids.len() * channel_names.len() * grid.height * grid.width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "payload has {} values, shape [{}, {}, {}, {}] needs {}",
                data.len(),
                month_ids.len(),
                channel_names.len(),
                grid.height,
                grid.width,
                expected
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!("volume magnitudes must be finite and >= 0, found {v}")));
        }
        Ok(ZStackVolume { data, channel_names, month_ids, grid })
    }

    pub fn zeros(month_ids: RangeInclusive<u32>, grid: GridSpec) -> Result<Self> {
        let month_ids: Vec<u32> = month_ids.collect();
        let len = month_ids.len() * N_TYPES * grid.height * grid.width;
        Self::new(vec![0.0; len], default_channels(), month_ids, grid)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.month_ids.len(), self.channel_names.len(), self.grid.height, self.grid.width]
    }

    pub fn months(&self) -> usize {
        self.month_ids.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn month_ids(&self) -> &[u32] {
        &self.month_ids
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn frame_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// All channels of month index `t` (not month id).
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frame_len();
        &self.data[t * len..(t + 1) * len]
    }

    pub fn value(&self, t: usize, c: usize, row: usize, col: usize) -> f32 {
        self.data[((t * self.channels() + c) * self.height() + row) * self.width() + col]
    }

    pub fn month_index(&self, month_id: u32) -> Option<usize> {
        let first = *self.month_ids.first()?;
        let idx = month_id.checked_sub(first)? as usize;
        (idx < self.months()).then_some(idx)
    }

    /// Months with indices in `range`, as a new volume.
    pub fn slice_months(&self, range: core::ops::Range<usize>) -> ZStackVolume {
        let len = self.frame_len();
        ZStackVolume {
            data: self.data[range.start * len..range.end * len].to_vec(),
            channel_names: self.channel_names.clone(),
            month_ids: self.month_ids[range].to_vec(),
            grid: self.grid,
        }
    }

    /// Fraction of cell-months with a nonzero value in channel `c`.
    pub fn prevalence(&self, c: usize) -> f64 {
        let plane = self.height() * self.width();
        if self.months() == 0 {
            return 0.0;
        }
        let active: usize = (0..self.months())
            .map(|t| self.frame(t)[c * plane..(c + 1) * plane].iter().filter(|v| **v > 0.0).count())
            .sum();
        active as f64 / (self.months() * plane) as f64
    }
}

pub fn default_channels() -> Vec<String> {
    DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect()
}

/// Aggregates event records into a volume over the inclusive month range.
///
/// Duplicate `(row, col, month)` records are summed per type before the log transform.
pub fn build_volume(events: &[EventRecord], grid: &GridSpec, months: RangeInclusive<u32>) -> Result<ZStackVolume> {
    grid.validate()?;
    let (first, last) = (*months.start(), *months.end());
    if first > last {
        return Err(Error::MonthRange(format!("empty month range {first}..={last}")));
    }
    let t_len = (last - first) as usize + 1;
    let plane = grid.height * grid.width;
    let mut counts = vec![[0u64; N_TYPES]; t_len * plane];
    for (index, ev) in events.iter().enumerate() {
        if ev.row >= grid.height || ev.col >= grid.width {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("cell ({}, {}) outside {}x{} grid", ev.row, ev.col, grid.height, grid.width),
            });
        }
        if !months.contains(&ev.month_id) {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("month_id {} outside {first}..={last}", ev.month_id),
            });
        }
        let slot = &mut counts[(ev.month_id - first) as usize * plane + ev.row * grid.width + ev.col];
        for (acc, add) in slot.iter_mut().zip(ev.counts()) {
            *acc = acc
                .checked_add(add)
                .ok_or(Error::CountOverflow { row: ev.row, col: ev.col, month_id: ev.month_id })?;
        }
    }
    let mut data = vec![0.0f32; t_len * N_TYPES * plane];
    for t in 0..t_len {
        for cell in 0..plane {
            for (c, &n) in counts[t * plane + cell].iter().enumerate() {
                if n > 0 {
                    data[(t * N_TYPES + c) * plane + cell] = log_magnitude(n) as f32;
                }
            }
        }
    }
    ZStackVolume::new(data, default_channels(), months.collect(), *grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionName {
    Calibration,
    Validation,
    Custom,
}

/// Inclusive month range whose last `test_months` months are held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub name: PartitionName,
    pub first_month_id: u32,
    pub last_month_id: u32,
    pub test_months: usize,
}

impl PartitionScheme {
    /// January 1990 to December 2015 (312 months).
    pub fn calibration() -> Self {
        PartitionScheme { name: PartitionName::Calibration, first_month_id: 0, last_month_id: 311, test_months: 36 }
    }

    /// January 1990 to December 2018 (348 months).
    pub fn validation() -> Self {
        PartitionScheme { name: PartitionName::Validation, first_month_id: 0, last_month_id: 347, test_months: 36 }
    }

    pub fn custom(first_month_id: u32, last_month_id: u32, test_months: usize) -> Result<Self> {
        let scheme = PartitionScheme { name: PartitionName::Custom, first_month_id, last_month_id, test_months };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn len(&self) -> usize {
        (self.last_month_id as usize + 1).saturating_sub(self.first_month_id as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_month_id > self.last_month_id || self.len() < self.test_months + 1 {
            return Err(Error::MonthRange(format!(
                "partition {}..={} is too short for {} test months",
                self.first_month_id, self.last_month_id, self.test_months
            )));
        }
        Ok(())
    }
}

/// Splits the scheme's month range into its training months and the last `test_months`.
pub fn partition(volume: &ZStackVolume, scheme: &PartitionScheme) -> Result<(ZStackVolume, ZStackVolume)> {
    scheme.validate()?;
    let (Some(start), Some(end)) = (volume.month_index(scheme.first_month_id), volume.month_index(scheme.last_month_id))
    else {
        return Err(Error::MonthRange(format!(
            "partition {}..={} exceeds volume months {:?}..={:?}",
            scheme.first_month_id,
            scheme.last_month_id,
            volume.month_ids().first(),
            volume.month_ids().last()
        )));
    };
    let split = end + 1 - scheme.test_months;
    Ok((volume.slice_months(start..split), volume.slice_months(split..end + 1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(row: usize, col: usize, month_id: u32, sb: u64, ns: u64, os: u64) -> EventRecord {
        EventRecord { row, col, month_id, fatalities_sb: sb, fatalities_ns: ns, fatalities_os: os }
    }

    #[test]
    fn duplicates_are_summed_before_log() {
        let grid = GridSpec::with_size(3, 3);
        let v = build_volume(&[rec(0, 0, 0, 2, 0, 0), rec(0, 0, 0, 3, 0, 0)], &grid, 0..=0).unwrap();
        assert!((v.value(0, 0, 0, 0) as f64 - 6f64.ln()).abs() < 1e-6);
        assert!((v.value(0, 0, 0, 0) - 1.7918).abs() < 1e-4);
    }

    #[test]
    fn empty_events_give_zero_volume() {
        let v = build_volume(&[], &GridSpec::with_size(4, 5), 0..=6).unwrap();
        assert_eq!(v.shape(), [7, 3, 4, 5]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_record_lands_on_one_voxel() {
        let v = build_volume(&[rec(1, 2, 5, 1, 0, 0)], &GridSpec::with_size(4, 4), 0..=7).unwrap();
        let nonzero: Vec<usize> = v.data().iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(v.value(5, 0, 1, 2), 2f32.ln());
    }

    #[test]
    fn out_of_range_records_name_their_index() {
        let grid = GridSpec::with_size(4, 4);
        let err = build_volume(&[rec(0, 0, 0, 1, 0, 0), rec(4, 0, 0, 1, 0, 0)], &grid, 0..=1).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { index: 1, .. }));
        let err = build_volume(&[rec(0, 0, 9, 1, 0, 0)], &grid, 0..=1).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { index: 0, .. }));
    }

    #[test]
    fn count_overflow_is_an_error() {
        let grid = GridSpec::with_size(1, 1);
        let err = build_volume(&[rec(0, 0, 0, u64::MAX, 0, 0), rec(0, 0, 0, 1, 0, 0)], &grid, 0..=0).unwrap_err();
        assert!(matches!(err, Error::CountOverflow { .. }));
    }

    #[test]
    fn paper_partitions_split_36_test_months() {
        let grid = GridSpec::with_size(2, 2);
        let v = ZStackVolume::zeros(0..=347, grid).unwrap();
        let (train, test) = partition(&v, &PartitionScheme::calibration()).unwrap();
        assert_eq!((train.months(), test.months()), (276, 36));
        let (train, test) = partition(&v, &PartitionScheme::validation()).unwrap();
        assert_eq!((train.months(), test.months()), (312, 36));
        assert_eq!(test.month_ids()[0], 312);
    }

    #[test]
    fn degenerate_and_oversized_partitions() {
        let v = ZStackVolume::zeros(0..=9, GridSpec::with_size(2, 2)).unwrap();
        let (train, test) = partition(&v, &PartitionScheme::custom(0, 9, 0).unwrap()).unwrap();
        assert_eq!((train.months(), test.months()), (10, 0));
        assert!(partition(&v, &PartitionScheme::custom(0, 10, 1).unwrap()).is_err());
        assert!(PartitionScheme::custom(0, 3, 4).is_err());
        assert!(partition(&v, &PartitionScheme::calibration()).is_err());
    }

    #[test]
    fn year_month_arithmetic() {
        let m0 = YearMonth { year: 1990, month: 1 };
        assert_eq!(m0.plus(311), YearMonth { year: 2015, month: 12 });
        assert_eq!(m0.plus(347), YearMonth { year: 2018, month: 12 });
    }

    #[test]
    fn constructor_rejects_inconsistent_volumes() {
        let grid = GridSpec::with_size(2, 2);
        assert!(ZStackVolume::new(vec![0.0; 11], default_channels(), vec![0], grid).is_err());
        assert!(ZStackVolume::new(vec![0.0; 24], default_channels(), vec![0, 2], grid).is_err());
        assert!(ZStackVolume::new(vec![-1.0; 12], default_channels(), vec![0], grid).is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<EventRecord>> {
        prop::collection::vec((0..5usize, 0..4usize, 0..6u32, 0..20u64, 0..20u64, 0..20u64), 0..40)
            .prop_map(|v| v.into_iter().map(|(r, c, m, a, b, d)| rec(r, c, m, a, b, d)).collect())
    }

    proptest! {
        #[test]
        fn build_is_permutation_invariant(events in arb_events(), seed in any::<u64>()) {
            let grid = GridSpec::with_size(5, 4);
            let a = build_volume(&events, &grid, 0..=5).unwrap();
            let mut shuffled = events.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(a, build_volume(&shuffled, &grid, 0..=5).unwrap());
        }

        #[test]
        fn partition_covers_range_disjointly(first in 0u32..10, len in 1usize..30, test in 0usize..30) {
            prop_assume!(test < len);
            let last = first + len as u32 - 1;
            let v = ZStackVolume::zeros(0..=45, GridSpec::with_size(1, 1)).unwrap();
            let scheme = PartitionScheme::custom(first, last, test).unwrap();
            let (train, hold) = partition(&v, &scheme).unwrap();
            let joined: Vec<u32> = train.month_ids().iter().chain(hold.month_ids()).copied().collect();
            prop_assert_eq!(joined, (first..=last).collect::<Vec<_>>());
            prop_assert_eq!(hold.months(), test);
        }
    }
}
