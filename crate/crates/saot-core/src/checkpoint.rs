use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::container::{Reader, Writer, F64_TAG};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Normalizer};
use crate::tensor::{ParameterStore, Tensor};
use crate::train::{AdamState, EpochMetrics, TrainConfig};

const MAGIC: &[u8; 8] = b"SAOTCP1\0";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    normalizer: Normalizer,
    train_resolution: usize,
    step: usize,
    metrics: Vec<EpochMetrics>,
}

/// A complete training artifact: configs, the parameter snapshot, optimizer
/// moments, and the metric log. Loading re-validates that the tensors on
/// disk are exactly the ones the config implies.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// data transform the model was trained under; applied around every
    /// forward pass at inference time
    pub normalizer: Normalizer,
    /// side length of the grids this model was fitted on; resolution sweeps
    /// mark this row as the training point
    pub train_resolution: usize,
    pub step: usize,
    pub metrics: Vec<EpochMetrics>,
    pub params: ParameterStore,
    pub adam: AdamState,
}

impl Checkpoint {
    /// Reconstruct the parameter handles for `self.params`, failing with the
    /// offending name if the snapshot and the config disagree.
    pub fn rebuild(&self) -> Result<ModelParams> {
        let mut scratch = ParameterStore::new(self.model.seed);
        let params = ModelParams::init(&mut scratch, &self.model)?;
        for (name, t) in scratch.iter() {
            let stored = self.params.get(name).map_err(|_| {
                Error::Format(format!("checkpoint is missing parameter {name}"))
            })?;
            if stored.shape != t.shape {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?} on disk but the config implies {:?}",
                    stored.shape, t.shape
                )));
            }
        }
        for (name, _) in self.params.iter() {
            if !scratch.contains(name) {
                return Err(Error::Format(format!(
                    "parameter {name} is not part of the configured model"
                )));
            }
        }
        for state in [&self.adam.m, &self.adam.v] {
            for (name, values) in state {
                let stored = self.params.get(name).map_err(|_| {
                    Error::Format(format!("optimizer state for unknown parameter {name}"))
                })?;
                if values.len() != stored.numel() {
                    return Err(Error::Format(format!(
                        "optimizer state for {name} has {} entries, parameter has {}",
                        values.len(),
                        stored.numel()
                    )));
                }
            }
        }
        Ok(params)
    }

    /// Forward pass in raw data space: the recorded transform standardizes
    /// the input and rescales the prediction back.
    pub fn predict(&self, model: &ModelParams, a: &Tensor) -> Result<Tensor> {
        let pred = model.forward(&self.params, &self.normalizer.encode_input(a))?;
        Ok(self.normalizer.decode_prediction(&pred))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            train: self.train.clone(),
            normalizer: self.normalizer,
            train_resolution: self.train_resolution,
            step: self.step,
            metrics: self.metrics.clone(),
        })
        .map_err(|e| Error::Format(format!("config header does not serialize: {e}")))?;
        let mut w = Writer::new(MAGIC);
        w.u64(header.len() as u64);
        w.bytes(&header);
        w.u8(F64_TAG);
        w.u64(self.params.len() as u64);
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape.len() as u32);
            for &d in &t.shape {
                w.u64(d as u64);
            }
            w.f64_slice(&t.values);
        }
        w.u64(self.adam.step as u64);
        w.u64(self.adam.m.len() as u64);
        for (name, m) in &self.adam.m {
            let v = self.adam.v.get(name).ok_or_else(|| {
                Error::Format(format!("optimizer state for {name} lacks a second moment"))
            })?;
            w.str(name);
            w.u64(m.len() as u64);
            w.f64_slice(m);
            w.f64_slice(v);
        }
        std::fs::write(path, w.finish())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let data = std::fs::read(path)?;
        let mut r = Reader::new(&data, MAGIC)?;
        let header: Header = serde_json::from_slice(r.var_bytes()?)
            .map_err(|e| Error::Format(format!("config header does not parse: {e}")))?;
        let tag = r.u8()?;
        if tag != F64_TAG {
            return Err(Error::Format(format!("unknown element type tag {tag:#x}")));
        }
        let count = r.u64()? as usize;
        let mut params = ParameterStore::new(header.model.seed);
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let values = r.f64_vec(numel)?;
            let t = Tensor { shape, values, requires_grad: false, grad: Vec::new() };
            params.insert(&name, t)?;
        }
        let adam_step = r.u64()? as usize;
        let adam_count = r.u64()? as usize;
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for _ in 0..adam_count {
            let name = r.str()?;
            let len = r.u64()? as usize;
            m.insert(name.clone(), r.f64_vec(len)?);
            v.insert(name, r.f64_vec(len)?);
        }
        r.finish()?;
        let checkpoint = Checkpoint {
            model: header.model,
            train: header.train,
            normalizer: header.normalizer,
            train_resolution: header.train_resolution,
            step: header.step,
            metrics: header.metrics,
            params,
            adam: AdamState { step: adam_step, m, v },
        };
        checkpoint.rebuild()?;
        Ok(checkpoint)
    }
}
