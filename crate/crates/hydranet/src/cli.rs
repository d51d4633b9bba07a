//! Command-line interface: `tensorize`, `train`, `forecast`, `evaluate`, `report` and `config`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hydranet_core::synth::{generate, SynthKind, SynthSpec};
use hydranet_core::volume::{GridSpec, RowOrder, YearMonth, ZStackVolume};
use hydranet_core::TASK_NAMES;
use toml::{Table, Value};

use crate::checkpoint::read_checkpoint;
use crate::config::{apply_env, parse_literal, schema_help, set_path, RunConfig};
use crate::container::{read_container, read_summary, read_volume, write_cube, write_summary, write_volume, Kind};
use crate::error::{Error, Result};
use crate::events::{read_events, tensorize};
use crate::fit::{fit, FitOptions};
use crate::mask::read_mask;
use crate::pipeline::{run_evaluate, run_forecast, ForecastOptions};
use crate::plot::plot_report;
use crate::report::{comparison_table, write_report};

pub const CUBE_FILE: &str = "cube.zstk";
pub const SUMMARY_FILE: &str = "summary.zstk";

#[derive(Debug, Parser)]
#[command(name = "hydranet", version, about = "Grid-month conflict forecasting with a multi-head recurrent U-Net")]
#[command(after_long_help = schema_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate an event file (or a synthetic generator) into a ZSTK1 volume.
    Tensorize(TensorizeArgs),
    /// Train on the training partition of a volume.
    #[command(after_help = schema_help())]
    Train(TrainArgs),
    /// Sample the forecast posterior from a checkpoint.
    Forecast(ForecastArgs),
    /// Score a forecast against a truth volume and plot the metric series.
    Evaluate(EvaluateArgs),
    /// Compare over-month means across evaluation directories.
    Report(ReportArgs),
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct TensorizeArgs {
    /// Event file with header row,col,month_id,sb,ns,os.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub events: Option<PathBuf>,
    /// Generator to use instead of an event file: moving_blob, diffusion or static_hotspots.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 180)]
    pub height: usize,
    #[arg(long, default_value_t = 180)]
    pub width: usize,
    #[arg(long, default_value_t = 0.5)]
    pub cell_size: f64,
    #[arg(long, default_value_t = -37.0, allow_hyphen_values = true)]
    pub origin_lat: f64,
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    pub origin_lon: f64,
    /// Calendar month of month_id 0, as YYYY-MM.
    #[arg(long, default_value = "1990-01")]
    pub month0: String,
    #[arg(long)]
    pub north_first: bool,
    /// First month_id of the volume (event input).
    #[arg(long, default_value_t = 0)]
    pub first_month: u32,
    /// Last month_id of the volume; defaults to the latest event month.
    #[arg(long)]
    pub last_month: Option<u32>,
    /// Months to generate (synthetic input).
    #[arg(long, default_value_t = 60)]
    pub months: usize,
    /// Generator seed (synthetic input).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML configuration; every key is optional except train.seed.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub volume: PathBuf,
    /// Run directory for the checkpoint and the training log.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides any key, e.g. --set train.epochs=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continue from the checkpoint in the run directory with its stored configuration.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub volume: PathBuf,
    /// Output directory for cube.zstk and summary.zstk.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dropout rate while sampling.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Turn dropout off, collapsing all samples onto one trajectory.
    #[arg(long)]
    pub deterministic: bool,
    /// Condition on every month of the volume rather than the training span.
    #[arg(long)]
    pub observe_all: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// summary.zstk, cube.zstk, or a forecast directory containing summary.zstk.
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// row,col include-list restricting scored cells.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_month0(s: &str) -> Result<YearMonth> {
    let bad = || Error::Config(vec![format!("--month0 must look like YYYY-MM, got {s:?}")]);
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let ym = YearMonth { year: y.parse().map_err(|_| bad())?, month: m.parse().map_err(|_| bad())? };
    if !(1..=12).contains(&ym.month) {
        return Err(bad());
    }
    Ok(ym)
}

fn prevalence_summary(v: &ZStackVolume) -> String {
    let [t, c, h, w] = v.shape();
    let prev: Vec<String> =
        (0..c.min(TASK_NAMES.len())).map(|k| format!("{}={:.4}", TASK_NAMES[k], v.prevalence(k))).collect();
    format!(
        "shape [{t}, {c}, {h}, {w}], months {:?}..={:?}, prevalence {}",
        v.month_ids().first(),
        v.month_ids().last(),
        prev.join(" ")
    )
}

pub fn cmd_tensorize(a: &TensorizeArgs) -> Result<String> {
    let grid = GridSpec {
        height: a.height,
        width: a.width,
        cell_size_deg: a.cell_size,
        origin_lat: a.origin_lat,
        origin_lon: a.origin_lon,
        month0: parse_month0(&a.month0)?,
        row_order: if a.north_first { RowOrder::NorthFirst } else { RowOrder::SouthFirst },
    };
    grid.validate()?;
    let volume = if let Some(name) = &a.synthetic {
        let kind = SynthKind::from_name(name).ok_or_else(|| {
            Error::Config(vec![format!("unknown generator {name:?}; use moving_blob, diffusion or static_hotspots")])
        })?;
        let spec = SynthSpec::new(kind, a.height, a.width, a.months, a.seed);
        spec.validate()?;
        let events = generate(&spec)?;
        hydranet_core::volume::build_volume(&events, &grid, spec.month_range())?
    } else {
        let path = a.events.as_deref().expect("clap requires --events or --synthetic");
        let table = read_events(path)?;
        let last = a.last_month.or(table.max_month_id()).unwrap_or(a.first_month);
        if last < a.first_month {
            return Err(Error::Config(vec![format!("--last-month {last} precedes --first-month {}", a.first_month)]));
        }
        tensorize(&table, path, &grid, a.first_month..=last)?
    };
    write_volume(&a.out, &volume)?;
    Ok(format!("wrote {}: {}", a.out.display(), prevalence_summary(&volume)))
}

/// Merges the config file, `HYDRANET__*` variables, `--set` and `--seed`, in that order.
pub fn load_run_config(
    path: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => RunConfig::read_table(p)?,
        None => Table::new(),
    };
    apply_env(&mut table, env);
    let mut errors = Vec::new();
    for s in sets {
        match s.split_once('=') {
            Some((k, v)) => set_path(&mut table, k.trim(), parse_literal(v.trim())),
            None => errors.push(format!("--set expects KEY=VALUE, got {s:?}")),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    if let Some(seed) = seed {
        set_path(&mut table, "train.seed", Value::Integer(seed as i64));
    }
    RunConfig::from_table(table)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let volume = read_volume(&a.volume)?;
    let cfg = if a.resume {
        read_checkpoint(&crate::fit::checkpoint_path(&a.out))?.config
    } else {
        load_run_config(a.config.as_deref(), std::env::vars(), &a.set, a.seed)?
    };
    let out = fit(&volume, &cfg, &a.out, FitOptions { resume: a.resume, stop_after: a.stop_after })?;
    Ok(format!(
        "trained {} epoch(s), {} step(s) this run, last loss {}; checkpoint {}, log {}",
        out.epochs_done,
        out.steps_logged,
        out.last_loss.map_or_else(|| "n/a".into(), |l| format!("{l:.6}")),
        out.checkpoint.display(),
        out.log.display()
    ))
}

pub fn cmd_forecast(a: &ForecastArgs) -> Result<String> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let volume = read_volume(&a.volume)?;
    let mut opts = ForecastOptions::from_checkpoint(&ck);
    opts.horizon = a.horizon.unwrap_or(opts.horizon);
    opts.samples = a.samples.unwrap_or(opts.samples);
    opts.seed = a.seed.unwrap_or(opts.seed);
    opts.dropout_rate = a.dropout.or(opts.dropout_rate);
    opts.deterministic = a.deterministic;
    opts.observe_all = a.observe_all;
    let (cube, summary) = run_forecast(&ck, &volume, &opts)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_cube(&a.out.join(CUBE_FILE), &cube)?;
    write_summary(&a.out.join(SUMMARY_FILE), &summary)?;
    Ok(format!(
        "wrote {} samples x {} months from month {} to {}",
        cube.n_samples,
        cube.horizon,
        cube.first_forecast_month_id,
        a.out.display()
    ))
}

fn load_summary(path: &Path) -> Result<hydranet_core::forecast::ForecastSummary> {
    let path = if path.is_dir() { path.join(SUMMARY_FILE) } else { path.to_path_buf() };
    let (header, _) = read_container(&path)?;
    match header.kind {
        Kind::ForecastSummary => read_summary(&path),
        Kind::ForecastCube => {
            let cube = crate::container::read_cube(&path)?;
            Ok(hydranet_core::forecast::summarize(&cube, &crate::config::ForecastConfig::default().quantiles)?)
        }
        Kind::Volume => Err(Error::corrupt(&path, "expected a forecast, found a volume")),
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<String> {
    let summary = load_summary(&a.forecast)?;
    let truth = read_volume(&a.truth)?;
    let mask = a.mask.as_deref().map(|p| read_mask(p, truth.height(), truth.width())).transpose()?;
    let (report, meta) = run_evaluate(&summary, &truth, mask)?;
    write_report(&a.out, &report, &meta)?;
    if !a.no_plots {
        plot_report(&a.out, &report)?;
    }
    let mut msg = format!(
        "scored {} month(s) on {} of {} cells (mask {}); report in {}",
        meta.months,
        meta.masked_cells,
        meta.total_cells,
        meta.mask_name,
        a.out.display()
    );
    for m in report.means() {
        msg.push_str(&format!(
            "\n  {} {:<5} model {:>10} baseline {:>10}",
            m.task,
            m.metric,
            m.model.map_or("NA".into(), |v| format!("{v:.4}")),
            m.baseline.map_or("NA".into(), |v| format!("{v:.4}"))
        ));
    }
    Ok(msg)
}

pub fn cmd_report(a: &ReportArgs) -> Result<String> {
    let table = comparison_table(&a.dirs)?;
    if let Some(out) = &a.out {
        std::fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(table.trim_end().to_string())
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Tensorize(a) => cmd_tensorize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Forecast(a) => cmd_forecast(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Config => Ok(RunConfig::default().to_toml().trim_end().to_string()),
    }
}
