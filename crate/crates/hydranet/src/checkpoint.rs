//! HNCK1 training checkpoints: `HNCK1\n`, a little-endian `u64` header length,
//! a JSON header, then parameter values followed by the two moment buffers as
//! little-endian `f32`.

use std::path::Path;

use hydranet_core::losses::TaskLogVariances;
use hydranet_core::model::HydraNet;
use hydranet_core::nn::ParamStore;
use hydranet_core::optim::{Optimizer, OptimizerKind};
use hydranet_core::trainer::TrainState;
use hydranet_core::N_HEADS;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::container::{payload_f32, read_bytes, unframe, write_framed};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"HNCK1\n";
pub const VERSION: u32 = 1;

/// Position of the training RNG, enough to continue its stream exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit word position, as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> std::result::Result<ChaCha8Rng, String> {
        let pos: u128 = self.word_pos.parse().map_err(|_| format!("bad rng word_pos {:?}", self.word_pos))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    m_logvar: [f64; N_HEADS],
    v_logvar: [f64; N_HEADS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: RunConfig,
    epoch: usize,
    rng: RngState,
    logvars: [f64; N_HEADS],
    optimizer: OptimizerHeader,
    params: Vec<ParamEntry>,
}

/// Everything needed to resume training or to forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
    pub rng: RngState,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let params = ck.state.model.params().entries();
    let opt = &ck.state.optimizer;
    let header = Header {
        version: VERSION,
        config: ck.config.clone(),
        epoch: ck.state.epoch,
        rng: ck.rng.clone(),
        logvars: ck.state.logvars.s,
        optimizer: OptimizerHeader {
            kind: opt.kind,
            learning_rate: opt.learning_rate,
            steps: opt.steps,
            m_logvar: opt.m_logvar,
            v_logvar: opt.v_logvar,
        },
        params: params.iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut blobs: Vec<&[f32]> = params.iter().map(|p| p.value.as_slice()).collect();
    blobs.extend(opt.m.iter().map(Vec::as_slice));
    blobs.extend(opt.v.iter().map(Vec::as_slice));
    write_framed(path, MAGIC, &json, &blobs)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    let (json, payload) = unframe(&bytes, MAGIC, "HNCK1", path)?;
    let h: Header =
        serde_json::from_slice(json).map_err(|e| Error::corrupt(path, format!("unreadable checkpoint header: {e}")))?;
    if h.version != VERSION {
        return Err(Error::corrupt(path, format!("unsupported checkpoint version {}", h.version)));
    }
    let sizes: Vec<usize> = h.params.iter().map(|p| p.shape.iter().product()).collect();
    let per_copy: usize = sizes.iter().sum();
    let values = payload_f32(payload, 3 * per_copy, path)?;

    let mut chunks = values.chunks_exact(per_copy);
    let split = |flat: &[f32]| -> Vec<Vec<f32>> {
        let mut out = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &n in &sizes {
            out.push(flat[at..at + n].to_vec());
            at += n;
        }
        out
    };
    let (p, m, v) = (split(chunks.next().unwrap()), split(chunks.next().unwrap()), split(chunks.next().unwrap()));

    let mut store = ParamStore::new();
    for (entry, value) in h.params.into_iter().zip(p) {
        store.add(entry.name, entry.shape, value);
    }
    let mut model: HydraNet<f32> = HydraNet::new(h.config.model, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::corrupt(path, format!("stored model config: {e}")))?;
    model.load_params(store).map_err(|e| Error::corrupt(path, e.to_string()))?;
    let o = h.optimizer;
    let optimizer = Optimizer {
        kind: o.kind,
        learning_rate: o.learning_rate,
        steps: o.steps,
        m,
        v,
        m_logvar: o.m_logvar,
        v_logvar: o.v_logvar,
    };
    h.rng.restore().map_err(|e| Error::corrupt(path, e))?;
    Ok(Checkpoint {
        config: h.config,
        state: TrainState { model, logvars: TaskLogVariances { s: h.logvars }, optimizer, epoch: h.epoch },
        rng: h.rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn tiny() -> Checkpoint {
        let mut config = RunConfig::default();
        config.model.base_filters = 2;
        config.model.levels = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = HydraNet::new(config.model, &mut rng).unwrap();
        let mut state = TrainState::new(model, &config.train);
        state.epoch = 4;
        state.logvars.s[2] = -0.25;
        state.optimizer.steps = 9;
        state.optimizer.m[0][0] = 0.5;
        state.optimizer.v[1][0] = 0.125;
        state.optimizer.v_logvar[5] = 1e-3;
        for _ in 0..7 {
            rng.next_u32();
        }
        Checkpoint { rng: RngState::capture(3, &rng), config, state }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hnck");
        let ck = tiny();
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let mut replay = ChaCha8Rng::seed_from_u64(3);
        HydraNet::<f32>::new(ck.config.model, &mut replay).unwrap();
        for _ in 0..7 {
            replay.next_u32();
        }
        assert_eq!(back.rng.restore().unwrap().next_u64(), replay.next_u64());
    }

    #[test]
    fn damage_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hnck");
        write_checkpoint(&path, &tiny()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Corrupt { .. })));
        std::fs::write(&path, b"ZSTK1\n").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Magic { .. })));
    }
}
