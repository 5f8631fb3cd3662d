use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::rollout::WorkerState;
use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::policy::{ModelConfig, PolicyModel};
use crate::tensor::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NAVCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Loop counters and worker streams needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub global_step: u64,
    pub updates: u64,
    pub adam_steps: u64,
    pub workers: Vec<WorkerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    model: ModelConfig,
    state: Option<TrainState>,
}

/// Config block plus named f32 tensors. Parameters use their store names;
/// optimizer moments are stored as `adam.m.<name>` and `adam.v.<name>`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub state: Option<TrainState>,
    pub tensors: Vec<(String, Mat<f32>)>,
}

impl Checkpoint {
    /// Weights-only checkpoint of `model`.
    pub fn of_model(config: &TrainConfig, model: &PolicyModel<f32>) -> Self {
        let tensors = model.params().iter().map(|(_, n, m)| (n.to_string(), m.clone())).collect();
        Self { config: config.clone(), model: model.config().clone(), state: None, tensors }
    }

    /// Full training snapshot.
    pub fn of_training(config: &TrainConfig, model: &PolicyModel<f32>, opt: &Adam<f32>, state: TrainState) -> Self {
        let mut ck = Self::of_model(config, model);
        for ((_, name, _), (m, v)) in model.params().iter().zip(opt.m.iter().zip(&opt.v)) {
            ck.tensors.push((format!("adam.m.{name}"), m.clone()));
            ck.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        ck.state = Some(state);
        ck
    }

    fn tensor(&self, name: &str) -> Option<&Mat<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Rebuilds the policy: the frozen backbone comes from its seed, the
    /// trainable weights from the stored tensors.
    pub fn build_model(&self) -> Result<PolicyModel<f32>> {
        let mut model = PolicyModel::<f32>::new(self.model.clone())?;
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_string();
            let stored = self.tensor(&name).ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            let slot = model.params_mut().get_mut(id);
            if slot.shape() != stored.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {name} is {:?}, model expects {:?}", stored.shape(), slot.shape()),
                ));
            }
            *slot = stored.clone();
        }
        Ok(model)
    }

    /// Optimizer state matching `model`, if the checkpoint holds one.
    pub fn build_optimizer(&self, model: &PolicyModel<f32>) -> Result<Option<Adam<f32>>> {
        let Some(state) = &self.state else { return Ok(None) };
        let c = &self.config;
        let mut opt = Adam::new(model.params(), c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps);
        for (i, (_, name, _)) in model.params().iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut opt.m[i]), ("adam.v.", &mut opt.v[i])] {
                let key = format!("{prefix}{name}");
                let t = self.tensor(&key).ok_or_else(|| Error::format("checkpoint", format!("missing tensor {key}")))?;
                *dst = t.clone();
            }
        }
        opt.t = state.adam_steps;
        Ok(Some(opt))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header { config: self.config.clone(), model: self.model.clone(), state: self.state.clone() };
        let json = serde_json::to_string(&header).map_err(|e| Error::Internal(e.to_string()))?;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&json);
        w.u32(self.tensors.len() as u32);
        for (name, m) in &self.tensors {
            w.str(name);
            w.u32(m.rows() as u32);
            w.u32(m.cols() as u32);
            for &v in m.data() {
                w.f32(v);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("checkpoint", bytes);
        let version = r.header(CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let header: Header =
            serde_json::from_str(&r.str()?).map_err(|e| Error::format("checkpoint", format!("config block: {e}")))?;
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.str()?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let data = (0..rows * cols).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Mat::from_vec(rows, cols, data)));
        }
        if !r.is_done() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { config: header.config, model: header.model, state: header.state, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
