//! Point-forecast scoring: MSE, Brier, ROC AUC and average precision per month and task,
//! against the no-change baseline, under a region mask.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::forecast::ForecastSummary;
use crate::transform::presence;
use crate::volume::{GridSpec, ZStackVolume};
use crate::{N_HEADS, N_TYPES, TASK_NAMES};

fn selected<'a>(len: usize, mask: Option<&'a [bool]>) -> impl Iterator<Item = usize> + 'a {
    (0..len).filter(move |&i| mask.map_or(true, |m| m[i]))
}

fn check_lengths(a: usize, b: usize, mask: Option<&[bool]>) {
    assert_eq!(a, b, "metric inputs differ in length");
    if let Some(m) = mask {
        assert_eq!(m.len(), a, "mask length differs from inputs");
    }
}

/// Mean squared error over masked cells.
pub fn mse(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    check_lengths(pred.len(), target.len(), mask);
    let (mut sum, mut n) = (0.0, 0usize);
    for i in selected(pred.len(), mask) {
        let d = pred[i] - target[i];
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean of `(prob - label)^2` over masked cells.
pub fn brier(prob: &[f64], label: &[bool], mask: Option<&[bool]>) -> Result<f64> {
    check_lengths(prob.len(), label.len(), mask);
    let (mut sum, mut n) = (0.0, 0usize);
    for i in selected(prob.len(), mask) {
        if !(0.0..=1.0).contains(&prob[i]) {
            return Err(Error::InvalidValue(format!("probability {} outside [0, 1]", prob[i])));
        }
        let d = prob[i] - if label[i] { 1.0 } else { 0.0 };
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mann-Whitney AUC with ties counted as one half; `None` unless both classes are present.
pub fn roc_auc(score: &[f64], label: &[bool], mask: Option<&[bool]>) -> Option<f64> {
    check_lengths(score.len(), label.len(), mask);
    let mut idx: Vec<usize> = selected(score.len(), mask).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let (mut pos, mut rank_sum) = (0u64, 0.0f64);
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && score[idx[end]] == score[idx[start]] {
            end += 1;
        }
        // 1-based midrank of the tie group, doubled to stay integral
        let mid2 = (start + 1 + end) as u64;
        let group_pos = idx[start..end].iter().filter(|&&i| label[i]).count() as u64;
        pos += group_pos;
        rank_sum += (group_pos * mid2) as f64;
        start = end;
    }
    let neg = idx.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let u2 = rank_sum - (pos * (pos + 1)) as f64;
    Some(u2 / (2 * pos * neg) as f64)
}

/// Non-interpolated average precision; `None` without positives.
///
/// Cells are ranked by score descending, ties broken by cell index ascending.
pub fn average_precision(score: &[f64], label: &[bool], mask: Option<&[bool]>) -> Option<f64> {
    check_lengths(score.len(), label.len(), mask);
    let mut idx: Vec<usize> = selected(score.len(), mask).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0f64);
    for (rank, &i) in idx.iter().enumerate() {
        if label[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Cells included in scoring, row-major `[H × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub name: String,
    height: usize,
    width: usize,
    include: Vec<bool>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, height: usize, width: usize, include: Vec<bool>) -> Result<Self> {
        if include.len() != height * width {
            return Err(Error::Shape(format!("mask has {} cells, grid has {}", include.len(), height * width)));
        }
        if !include.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
        Ok(RegionMask { name: name.into(), height, width, include })
    }

    pub fn all(height: usize, width: usize) -> Self {
        RegionMask { name: "all".into(), height, width, include: vec![true; height * width] }
    }

    /// Include-list of `(row, col)` cells.
    pub fn from_cells(name: impl Into<String>, height: usize, width: usize, cells: &[(usize, usize)]) -> Result<Self> {
        let mut include = vec![false; height * width];
        for &(r, c) in cells {
            if r >= height || c >= width {
                return Err(Error::Shape(format!("mask cell ({r}, {c}) outside {height}x{width} grid")));
            }
            include[r * width + c] = true;
        }
        Self::new(name, height, width, include)
    }

    /// Every cell except those whose centre lies in the latitude/longitude box.
    pub fn excluding_bbox(name: impl Into<String>, grid: &GridSpec, lat: (f64, f64), lon: (f64, f64)) -> Result<Self> {
        let mut include = vec![true; grid.height * grid.width];
        for r in 0..grid.height {
            for c in 0..grid.width {
                let (y, x) = grid.cell_center(r, c);
                if lat.0 <= y && y <= lat.1 && lon.0 <= x && x <= lon.1 {
                    include[r * grid.width + c] = false;
                }
            }
        }
        Self::new(name, grid.height, grid.width, include)
    }

    /// Example exclusion of a Middle East box (12..42 N, 25..63 E); real runs should pass a cell list.
    pub fn middle_east_example(grid: &GridSpec) -> Result<Self> {
        Self::excluding_bbox("exclude_middle_east_bbox", grid, (12.0, 42.0), (25.0, 63.0))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.include
    }

    pub fn included_count(&self) -> usize {
        self.include.iter().filter(|&&b| b).count()
    }
}

/// Deterministic point forecast `[horizon × 6 × H × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForecast {
    pub horizon: usize,
    pub height: usize,
    pub width: usize,
    pub first_forecast_month_id: u32,
    pub values: Vec<f32>,
}

impl PointForecast {
    pub fn plane(&self, month: usize, head: usize) -> &[f32] {
        let plane = self.height * self.width;
        let start = (month * N_HEADS + head) * plane;
        &self.values[start..start + plane]
    }
}

impl From<&ForecastSummary> for PointForecast {
    fn from(s: &ForecastSummary) -> Self {
        PointForecast {
            horizon: s.horizon,
            height: s.height,
            width: s.width,
            first_forecast_month_id: s.first_forecast_month_id,
            values: s.mean.clone(),
        }
    }
}

/// Repeats the last observed month: magnitudes on regression heads, presence on classification heads.
pub fn no_change_baseline(observed: &ZStackVolume, horizon: usize) -> Result<PointForecast> {
    let months = observed.months();
    if months == 0 {
        return Err(Error::Shape("baseline needs at least one observed month".into()));
    }
    let plane = observed.height() * observed.width();
    let last = observed.frame(months - 1);
    let mut month = Vec::with_capacity(N_HEADS * plane);
    month.extend_from_slice(&last[..N_TYPES * plane]);
    month.extend(last[..N_TYPES * plane].iter().map(|&v| presence(v)));
    let values = month.repeat(horizon);
    Ok(PointForecast {
        horizon,
        height: observed.height(),
        width: observed.width(),
        first_forecast_month_id: observed.month_ids()[months - 1] + 1,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Sb,
    Ns,
    Os,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Sb, Task::Ns, Task::Os];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        TASK_NAMES[self.index()]
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Mse,
    Ap,
    Auc,
    Brier,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Ap, Metric::Auc, Metric::Brier];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Ap => "ap",
            Metric::Auc => "auc",
            Metric::Brier => "brier",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Ap | Metric::Auc)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One scored (month, task, metric); `None` marks an undefined metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub month_id: u32,
    pub task: Task,
    pub metric: Metric,
    pub model: Option<f64>,
    pub baseline: Option<f64>,
}

/// Over-month mean of one (task, metric); undefined months are excluded and counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRow {
    pub task: Task,
    pub metric: Metric,
    pub model: Option<f64>,
    pub baseline: Option<f64>,
    pub months_used: usize,
    pub months_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub masked_cells: usize,
}

impl EvalReport {
    pub fn month_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.month_id).collect();
        ids.dedup();
        ids
    }

    pub fn get(&self, month_id: u32, task: Task, metric: Metric) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.month_id == month_id && r.task == task && r.metric == metric)
    }

    pub fn series(&self, task: Task, metric: Metric) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.task == task && r.metric == metric)
    }

    pub fn means(&self) -> Vec<MeanRow> {
        let mut out = Vec::with_capacity(12);
        for task in Task::ALL {
            for metric in Metric::ALL {
                let (mut sm, mut sb, mut used, mut excluded) = (0.0, 0.0, 0usize, 0usize);
                for r in self.series(task, metric) {
                    match (r.model, r.baseline) {
                        (Some(m), Some(b)) => {
                            sm += m;
                            sb += b;
                            used += 1;
                        }
                        _ => excluded += 1,
                    }
                }
                let mean = |s: f64| (used > 0).then(|| s / used as f64);
                out.push(MeanRow {
                    task,
                    metric,
                    model: mean(sm),
                    baseline: mean(sb),
                    months_used: used,
                    months_excluded: excluded,
                });
            }
        }
        out
    }

    pub fn mean(&self, task: Task, metric: Metric) -> Option<MeanRow> {
        self.means().into_iter().find(|m| m.task == task && m.metric == metric)
    }
}

fn score_month(pred: &PointForecast, m: usize, task: Task, truth: &[f32], mask: &[bool]) -> Result<[Option<f64>; 4]> {
    let plane = pred.height * pred.width;
    let t = task.index();
    let target: Vec<f64> = truth[t * plane..(t + 1) * plane].iter().map(|&v| v as f64).collect();
    let label: Vec<bool> = truth[t * plane..(t + 1) * plane].iter().map(|&v| presence(v) > 0.0).collect();
    let reg: Vec<f64> = pred.plane(m, t).iter().map(|&v| v as f64).collect();
    let cls: Vec<f64> = pred.plane(m, N_TYPES + t).iter().map(|&v| v as f64).collect();
    Ok([
        Some(mse(&reg, &target, Some(mask))?),
        average_precision(&cls, &label, Some(mask)),
        roc_auc(&cls, &label, Some(mask)),
        Some(brier(&cls, &label, Some(mask))?),
    ])
}

fn check_alignment(name: &str, f: &PointForecast, truth: &ZStackVolume) -> Result<()> {
    let first = truth.month_ids().first().copied().ok_or_else(|| Error::MonthRange("truth volume is empty".into()))?;
    if f.first_forecast_month_id != first || f.horizon < truth.months() {
        return Err(Error::MonthRange(format!(
            "{name} covers months {}..{} but truth covers {}..{}",
            f.first_forecast_month_id,
            f.first_forecast_month_id as usize + f.horizon,
            first,
            first as usize + truth.months()
        )));
    }
    if (f.height, f.width) != (truth.height(), truth.width()) {
        return Err(Error::Shape(format!(
            "{name} grid {}x{} differs from truth grid {}x{}",
            f.height,
            f.width,
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

/// Scores the posterior mean and the baseline against every month of `truth`.
///
/// Classification truth is the presence of fatalities recomputed from the magnitudes.
pub fn evaluate_forecast(
    summary: &ForecastSummary,
    truth: &ZStackVolume,
    mask: &RegionMask,
    baseline: &PointForecast,
) -> Result<EvalReport> {
    evaluate_point_forecast(&PointForecast::from(summary), truth, mask, baseline)
}

pub fn evaluate_point_forecast(
    model: &PointForecast,
    truth: &ZStackVolume,
    mask: &RegionMask,
    baseline: &PointForecast,
) -> Result<EvalReport> {
    check_alignment("forecast", model, truth)?;
    check_alignment("baseline", baseline, truth)?;
    if truth.channels() < N_TYPES {
        return Err(Error::Shape(format!("truth has {} channels, need {N_TYPES}", truth.channels())));
    }
    if (mask.height, mask.width) != (truth.height(), truth.width()) {
        return Err(Error::Shape("mask shape differs from the truth grid".into()));
    }
    let mut rows = Vec::with_capacity(truth.months() * 12);
    for (m, &month_id) in truth.month_ids().iter().enumerate() {
        let frame = truth.frame(m);
        for task in Task::ALL {
            let ours = score_month(model, m, task, frame, &mask.include)?;
            let base = score_month(baseline, m, task, frame, &mask.include)?;
            for (k, metric) in Metric::ALL.into_iter().enumerate() {
                rows.push(EvalRow { month_id, task, metric, model: ours[k], baseline: base[k] });
            }
        }
    }
    Ok(EvalReport { rows, masked_cells: mask.included_count() })
}
