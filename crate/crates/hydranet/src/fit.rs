//! The training loop around [`train_epoch`]: partitioning, periodic
//! checkpoints, a line-delimited JSON log and exact resumption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hydranet_core::losses::LossConfig;
use hydranet_core::model::HydraNet;
use hydranet_core::sampler::PatchSampler;
use hydranet_core::trainer::{train_epoch, TrainLogEntry, TrainState};
use hydranet_core::volume::{partition, ZStackVolume};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, RngState};
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.hnck";
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Continue from the checkpoint in the run directory.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs_done: usize,
    pub steps_logged: usize,
    pub last_loss: Option<f64>,
}

pub fn checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join(CHECKPOINT_FILE)
}

pub fn log_path(run_dir: &Path) -> PathBuf {
    run_dir.join(LOG_FILE)
}

pub fn read_log(path: &Path) -> Result<Vec<TrainLogEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i as u64 + 1, message: e.to_string() })?;
        out.push(entry);
    }
    Ok(out)
}

/// Keeps only entries from epochs before `epoch`, dropping steps logged after the last checkpoint.
fn truncate_log(path: &Path, epoch: usize) -> Result<()> {
    let kept: Vec<TrainLogEntry> = if path.exists() { read_log(path)? } else { Vec::new() };
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for e in kept.iter().filter(|e| e.epoch < epoch) {
        writeln!(file, "{}", serde_json::to_string(e).expect("log entry serializes")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// The training months of `volume` under the configured partition.
pub fn training_span(volume: &ZStackVolume, cfg: &RunConfig) -> Result<ZStackVolume> {
    let scheme = cfg.data.scheme(volume)?;
    Ok(partition(volume, &scheme)?.0)
}

/// Trains on the training partition of `volume`, writing the checkpoint and log into `run_dir`.
pub fn fit(volume: &ZStackVolume, cfg: &RunConfig, run_dir: &Path, opts: FitOptions) -> Result<FitOutcome> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let ck_path = checkpoint_path(run_dir);
    let log = log_path(run_dir);

    let (cfg, mut state, mut rng) = if opts.resume {
        let ck = read_checkpoint(&ck_path)?;
        let rng = ck.rng.restore().map_err(|e| Error::corrupt(&ck_path, e))?;
        truncate_log(&log, ck.state.epoch)?;
        (ck.config, ck.state, rng)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let model = HydraNet::new(cfg.model, &mut rng)?;
        File::create(&log).map_err(|e| Error::io(&log, e))?;
        (cfg.clone(), TrainState::new(model, &cfg.train), rng)
    };

    let train = training_span(volume, &cfg)?;
    if train.months() < 2 {
        return Err(Error::Misaligned(format!("training span has {} month(s); at least 2 are needed", train.months())));
    }
    if train.channels() != cfg.model.input_channels {
        return Err(Error::Config(vec![format!(
            "volume has {} channels, model.input_channels is {}",
            train.channels(),
            cfg.model.input_channels
        )]));
    }
    let sampler = PatchSampler::new(&train, cfg.data.sampler(cfg.train.epochs))?;
    let loss_cfg: LossConfig = cfg.loss;
    let mut log_file = OpenOptions::new().append(true).open(&log).map_err(|e| Error::io(&log, e))?;
    let start = Instant::now();
    let clock = || start.elapsed().as_secs_f64();
    let target = opts.stop_after.map_or(cfg.train.epochs, |s| s.min(cfg.train.epochs));
    let mut steps_logged = 0;
    let mut last_loss = None;

    let save = |state: &TrainState, rng: &ChaCha8Rng| {
        let ck = Checkpoint { config: cfg.clone(), state: state.clone(), rng: RngState::capture(cfg.train.seed, rng) };
        write_checkpoint(&ck_path, &ck)
    };

    while state.epoch < target {
        let entries = train_epoch(&mut state, &sampler, &loss_cfg, &cfg.train, &mut rng, &clock)?;
        for e in &entries {
            writeln!(log_file, "{}", serde_json::to_string(e).expect("log entry serializes"))
                .map_err(|err| Error::io(&log, err))?;
        }
        log_file.flush().map_err(|e| Error::io(&log, e))?;
        steps_logged += entries.len();
        last_loss = entries.last().map(|e| e.total_loss);
        if state.epoch % cfg.train.checkpoint_every == 0 || state.epoch == target {
            save(&state, &rng)?;
        }
    }
    if !ck_path.exists() {
        save(&state, &rng)?;
    }
    Ok(FitOutcome { checkpoint: ck_path, log, epochs_done: state.epoch, steps_logged, last_loss })
}
