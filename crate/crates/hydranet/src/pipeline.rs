//! Forecasting from a checkpoint and scoring a forecast against a truth volume.

use hydranet_core::forecast::{forecast_posterior, summarize, ForecastCube, ForecastSummary};
use hydranet_core::metrics::{evaluate_forecast, no_change_baseline, EvalReport, RegionMask};
use hydranet_core::volume::ZStackVolume;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fit::training_span;
use crate::report::ReportMeta;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOptions {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    /// Dropout while sampling; `None` keeps the trained rate.
    pub dropout_rate: Option<f64>,
    /// Disable dropout entirely so every sample is the same trajectory.
    pub deterministic: bool,
    /// Condition on the whole volume instead of the configured training span.
    pub observe_all: bool,
}

impl ForecastOptions {
    /// The checkpoint's forecast settings.
    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        let f = &ck.config.forecast;
        ForecastOptions {
            horizon: f.horizon,
            samples: f.samples,
            seed: f.seed,
            quantiles: f.quantiles.clone(),
            dropout_rate: f.dropout_rate,
            deterministic: false,
            observe_all: false,
        }
    }
}

/// Samples the posterior after warming up on the observed months of `volume`.
pub fn run_forecast(ck: &Checkpoint, volume: &ZStackVolume, opts: &ForecastOptions) -> Result<(ForecastCube, ForecastSummary)> {
    let mut model = ck.state.model.clone();
    let cfg = model.config();
    let mut problems = Vec::new();
    if volume.channels() != cfg.input_channels {
        problems.push(format!("volume has {} channels, the model expects {}", volume.channels(), cfg.input_channels));
    }
    let d = cfg.spatial_divisor();
    if volume.height() % d != 0 || volume.width() % d != 0 {
        problems.push(format!("grid {}x{} is not a multiple of {d} required by the model", volume.height(), volume.width()));
    }
    if opts.horizon == 0 || opts.samples == 0 {
        problems.push("horizon and samples must be positive".into());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if opts.deterministic {
        model.set_dropout_rate(0.0)?;
    } else if let Some(p) = opts.dropout_rate {
        model.set_dropout_rate(p)?;
    }
    let observed = if opts.observe_all { volume.clone() } else { training_span(volume, &ck.config)? };
    let cube = forecast_posterior(&model, &observed, opts.horizon, opts.samples, opts.seed)?;
    let summary = summarize(&cube, &opts.quantiles)?;
    Ok((cube, summary))
}

/// Scores `summary` against the months of `truth` it covers. The month before
/// the first forecast month must also be in `truth`; it seeds the baseline.
pub fn run_evaluate(summary: &ForecastSummary, truth: &ZStackVolume, mask: Option<RegionMask>) -> Result<(EvalReport, ReportMeta)> {
    let first = summary.first_forecast_month_id;
    let start = truth.month_index(first).ok_or_else(|| {
        Error::Misaligned(format!(
            "forecast starts at month {first} but the truth volume covers {:?}..={:?}",
            truth.month_ids().first(),
            truth.month_ids().last()
        ))
    })?;
    if start == 0 {
        return Err(Error::Misaligned(format!(
            "the truth volume has no month before {first} to seed the no-change baseline"
        )));
    }
    if (truth.height(), truth.width()) != (summary.height, summary.width) {
        return Err(Error::Misaligned(format!(
            "forecast grid {}x{} differs from truth grid {}x{}",
            summary.height,
            summary.width,
            truth.height(),
            truth.width()
        )));
    }
    let end = (start + summary.horizon).min(truth.months());
    let scored = truth.slice_months(start..end);
    let baseline = no_change_baseline(&truth.slice_months(0..start), summary.horizon)?;
    let mask = match mask {
        Some(m) => m,
        None => RegionMask::all(truth.height(), truth.width()),
    };
    let meta = ReportMeta {
        mask_name: mask.name.clone(),
        masked_cells: mask.included_count(),
        total_cells: truth.height() * truth.width(),
        first_forecast_month_id: first,
        months: scored.months(),
    };
    let report = evaluate_forecast(summary, &scored, &mask, &baseline)?;
    Ok((report, meta))
}
