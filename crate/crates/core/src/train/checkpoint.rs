//! Checkpoint container: `b"HNOC"`, `u32` version, `u64` manifest length,
//! UTF-8 JSON manifest, then little-endian `f32` buffers (parameters in
//! manifest order, followed by the Adam first and second moments when the
//! manifest records optimizer state).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{Adam, AdamSlot};
use super::trainer::TrainLog;
use crate::error::{Error, Result};
use crate::model::{HnoModel, ModelConfig};
use crate::pde::PdeDataset;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HNOC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Affine maps applied around the network: inputs are standardized per
/// channel, outputs are mapped back with the target statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            input_mean: vec![0.0; channels],
            input_std: vec![1.0; channels],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Training-set statistics; identity when `standardize` is off.
    pub fn fit(ds: &PdeDataset, standardize: bool) -> Self {
        let c = ds.input.shape[2];
        if !standardize {
            return Self::identity(c);
        }
        let (input_mean, input_std) = (0..c)
            .map(|ch| mean_std(ds.input.data.iter().skip(ch).step_by(c).map(|&v| v as f64)))
            .unzip();
        let (target_mean, target_std) = mean_std(ds.target.data.iter().map(|&v| v as f64));
        Normalization {
            input_mean,
            input_std,
            target_mean,
            target_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalization: Normalization,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub best_val: Option<f64>,
    pub initial_loss: Option<f64>,
    pub bad_epochs: usize,
    pub params: Vec<TensorEntry>,
    /// Adam step counter; `None` when no optimizer state is stored.
    pub adam_step: Option<u64>,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: Vec<Vec<f32>>,
    pub adam: Option<Vec<AdamSlot<f32>>>,
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_f32s(r: &mut &[u8], n: usize) -> Result<Vec<f32>> {
    Ok(take(r, n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    /// Snapshot of `model` with the given training progress; `adam` is
    /// stored when present.
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        model: &HnoModel<f32>,
        train: &TrainConfig,
        normalization: &Normalization,
        epoch: usize,
        step: usize,
        best_val: Option<f64>,
        initial_loss: Option<f64>,
        bad_epochs: usize,
        adam: Option<&Adam<f32>>,
        log: &TrainLog,
    ) -> Self {
        let ps = model.store.params();
        Checkpoint {
            manifest: CheckpointManifest {
                format_version: CHECKPOINT_VERSION,
                model: model.config.clone(),
                train: train.clone(),
                normalization: normalization.clone(),
                epoch,
                step,
                best_val,
                initial_loss,
                bad_epochs,
                params: ps
                    .iter()
                    .map(|p| TensorEntry {
                        name: p.name().to_string(),
                        shape: p.shape(),
                    })
                    .collect(),
                adam_step: adam.map(|a| a.step),
                log: log.clone(),
            },
            params: ps.iter().map(|p| p.get().to_vec()).collect(),
            adam: adam.map(|a| a.slots.clone()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Rebuilds the model from the stored configuration and loads the weights.
    pub fn build_model(&self) -> Result<HnoModel<f32>> {
        let model = HnoModel::new(self.manifest.model.clone())?;
        self.load_into(&model)?;
        Ok(model)
    }

    pub fn load_into(&self, model: &HnoModel<f32>) -> Result<()> {
        let ps = model.store.params();
        if ps.len() != self.manifest.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {}",
                self.manifest.params.len(),
                ps.len()
            )));
        }
        for ((p, e), data) in ps.iter().zip(&self.manifest.params).zip(&self.params) {
            if p.name() != e.name || p.shape() != e.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    e.name,
                    e.shape,
                    p.name(),
                    p.shape()
                )));
            }
            p.set(data.clone())?;
        }
        Ok(())
    }

    /// Optimizer state for resuming, if stored.
    pub fn optimizer(&self) -> Option<Adam<f32>> {
        Some(Adam {
            cfg: self.manifest.train.adam,
            step: self.manifest.adam_step?,
            slots: self.adam.clone()?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_string(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        let mut put = |v: &[f32]| {
            v.iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes()))
        };
        self.params.iter().for_each(|p| put(p));
        if let Some(slots) = &self.adam {
            slots.iter().for_each(|s| put(&s.m));
            slots.iter().for_each(|s| put(&s.v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        if take(&mut r, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(&mut r, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = u64::from_le_bytes(take(&mut r, 8)?.try_into().unwrap()) as usize;
        let manifest: CheckpointManifest = serde_json::from_slice(take(&mut r, len)?)?;
        let sizes: Vec<usize> = manifest
            .params
            .iter()
            .map(|e| e.shape.iter().product())
            .collect();
        let params = sizes
            .iter()
            .map(|&n| read_f32s(&mut r, n))
            .collect::<Result<Vec<_>>>()?;
        let adam = match manifest.adam_step {
            Some(_) => {
                let m = sizes
                    .iter()
                    .map(|&n| read_f32s(&mut r, n))
                    .collect::<Result<Vec<_>>>()?;
                let v = sizes
                    .iter()
                    .map(|&n| read_f32s(&mut r, n))
                    .collect::<Result<Vec<_>>>()?;
                Some(
                    m.into_iter()
                        .zip(v)
                        .map(|(m, v)| AdamSlot { m, v })
                        .collect(),
                )
            }
            None => None,
        };
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                r.len()
            )));
        }
        Ok(Checkpoint {
            manifest,
            params,
            adam,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
