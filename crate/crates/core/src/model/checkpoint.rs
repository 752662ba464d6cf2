//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `TRJFCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header of that many bytes, then
//! raw little-endian `f64` payload. The payload holds every parameter array
//! in header order, followed (when training state is present) by the Adam
//! first moments and then the second moments in the same order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, TrajectoryModel, Transformer};
use crate::context::{FeatureStats, PolarGridConfig, SemanticConfig};
use crate::dataset::WindowConfig;
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TRJFCKPT";

/// Where a model came from and how its inputs must be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub train_dataset: String,
    pub context: bool,
    pub window: WindowConfig,
    pub grid: PolarGridConfig,
    pub semantic: SemanticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Not persisted, so checkpoints of identical runs are byte-identical.
    #[serde(skip, default)]
    pub wall_seconds: f64,
}

/// Optimizer progress needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epochs_done: usize,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub history: Vec<EpochLog>,
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TrajectoryModel,
    pub provenance: Provenance,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrainingHeader {
    epochs_done: usize,
    step: u64,
    history: Vec<EpochLog>,
    train_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stats: FeatureStats,
    provenance: Provenance,
    params: Vec<ParamHeader>,
    training: Option<TrainingHeader>,
}

fn fail(msg: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(msg.to_string())
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, ModelError> {
    let transformer = &ckpt.model.transformer;
    let params = transformer.params();
    let header = Header {
        config: *transformer.config(),
        stats: ckpt.model.stats.clone(),
        provenance: ckpt.provenance.clone(),
        params: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(name, t)| ParamHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        training: ckpt.training.as_ref().map(|t| TrainingHeader {
            epochs_done: t.epochs_done,
            step: t.step,
            history: t.history.clone(),
            train_config: t.train_config.clone(),
        }),
    };
    let json = serde_json::to_vec(&header).map_err(fail)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.count_scalars() * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut push = |t: &Tensor| {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    params.tensors().for_each(&mut push);
    if let Some(state) = &ckpt.training {
        if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
            return Err(fail("optimizer moments do not match the parameter list"));
        }
        for (i, p) in params.tensors().enumerate() {
            if state.first_moment[i].shape() != p.shape() || state.second_moment[i].shape() != p.shape() {
                return Err(fail(format!("optimizer moment shape differs from parameter {}", params.name(i))));
            }
        }
        state.first_moment.iter().for_each(&mut push);
        state.second_moment.iter().for_each(&mut push);
    }
    Ok(out)
}

/// Writes the checkpoint to a sibling temp file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let bytes = encode(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| fail(format!("{}: {e}", path.display())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| fail("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor, ModelError> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| fail("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| fail("header too large"))?;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(fail)?;

    let mut names = Vec::with_capacity(header.params.len());
    let mut tensors = Vec::with_capacity(header.params.len());
    for p in &header.params {
        names.push(p.name.clone());
        tensors.push(r.tensor(&p.shape)?);
    }
    let params = ModelParams::new(names, tensors)?;
    let training = match header.training {
        None => None,
        Some(t) => {
            let moments = |r: &mut Reader| header.params.iter().map(|p| r.tensor(&p.shape)).collect::<Result<Vec<_>, _>>();
            let first_moment = moments(&mut r)?;
            let second_moment = moments(&mut r)?;
            Some(TrainingState {
                epochs_done: t.epochs_done,
                step: t.step,
                first_moment,
                second_moment,
                history: t.history,
                train_config: t.train_config,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let transformer = Transformer::from_params(header.config, params)?;
    Ok(Checkpoint {
        model: TrajectoryModel::new(transformer, header.stats)?,
        provenance: header.provenance,
        training,
    })
}
