//! Model checkpoints: one JSON header line followed by raw little-endian
//! `f32` parameter values in [`Model::params_mut`] order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{build_model, Model, ModelSpec};
use crate::metrics::EpochRecord;

pub const CHECKPOINT_FORMAT: &str = "avspot-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub spec: ModelSpec,
    pub chunk_len_s: usize,
    pub seed: u64,
    /// Epoch the weights were taken from; `None` for untrained or composed models.
    pub epoch: Option<usize>,
    pub val_map: Option<f64>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model<f32>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, chunk_len_s: usize, seed: u64) -> Self {
        let mut scratch = model.clone();
        let params = scratch
            .params_mut()
            .into_iter()
            .map(|(name, p)| {
                let (rows, cols) = p.shape();
                ParamEntry { name, rows, cols }
            })
            .collect();
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                spec: model.spec.clone(),
                chunk_len_s,
                seed,
                epoch: None,
                val_map: None,
                history: Vec::new(),
                params,
            },
            model,
        }
    }

    pub fn with_epoch(mut self, epoch: Option<usize>, val_map: Option<f64>) -> Self {
        self.header.epoch = epoch;
        self.header.val_map = val_map;
        self
    }

    pub fn with_history(mut self, history: Vec<EpochRecord>) -> Self {
        self.header.history = history;
        self
    }

    /// Fails unless the stored model was built for `spec` and `chunk_len_s`.
    pub fn ensure_matches(&self, spec: &ModelSpec, chunk_len_s: usize) -> Result<()> {
        if &self.header.spec != spec {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds a {} model, config asks for {}",
                self.header.spec.label(),
                spec.label()
            )));
        }
        if self.header.chunk_len_s != chunk_len_s {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint chunk length {} s, config {} s",
                self.header.chunk_len_s, chunk_len_s
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        let mut model = self.model.clone();
        for (_, p) in model.params_mut() {
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CheckpointMismatch("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::CheckpointMismatch(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format {:?}", header.format)));
        }
        let mut model = build_model::<f32>(&header.spec, 0)?;
        let mut blob = bytes[split + 1..].chunks_exact(4);
        let expected: usize = header.params.iter().map(|p| p.rows * p.cols * 4).sum();
        let actual = bytes.len() - split - 1;
        if expected != actual {
            return Err(Error::SizeMismatch {
                what: "checkpoint parameters".into(),
                expected: expected as u64,
                actual: actual as u64,
            });
        }
        {
            let params = model.params_mut();
            if params.len() != header.params.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "spec has {} tensors, checkpoint lists {}",
                    params.len(),
                    header.params.len()
                )));
            }
            for ((name, p), entry) in params.into_iter().zip(&header.params) {
                if name != entry.name || p.shape() != (entry.rows, entry.cols) {
                    return Err(Error::CheckpointMismatch(format!(
                        "tensor {name} {:?} vs stored {} ({}, {})",
                        p.shape(),
                        entry.name,
                        entry.rows,
                        entry.cols
                    )));
                }
                for v in p.value.iter_mut() {
                    let raw = blob.next().expect("length checked");
                    *v = f32::from_le_bytes(raw.try_into().expect("4-byte chunk"));
                }
            }
        }
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Modality;
    use crate::pooling::{PoolingKind, PoolingSpec};

    fn spec() -> ModelSpec {
        ModelSpec::fused(4, PoolingSpec::new(PoolingKind::NetRVlad, 6, 3).with_out_dim(5))
    }

    #[test]
    fn round_trip_is_exact() {
        let model = build_model::<f32>(&spec(), 7).unwrap();
        let ckpt = Checkpoint::new(model.clone(), 20, 7).with_epoch(Some(3), Some(0.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.header, ckpt.header);
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn spec_mismatch_detected() {
        let model = build_model::<f32>(&spec(), 1).unwrap();
        let ckpt = Checkpoint::new(model, 20, 1);
        assert!(ckpt.ensure_matches(&spec(), 20).is_ok());
        let other = ModelSpec::single(Modality::Video, spec().pooling);
        assert!(matches!(
            ckpt.ensure_matches(&other, 20),
            Err(Error::CheckpointMismatch(_))
        ));
        assert!(ckpt.ensure_matches(&spec(), 60).is_err());
    }

    #[test]
    fn truncated_blob_rejected() {
        let model = build_model::<f32>(&spec(), 1).unwrap();
        let mut bytes = Checkpoint::new(model, 20, 1).to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn tampered_shape_rejected() {
        let model = build_model::<f32>(&spec(), 1).unwrap();
        let mut ckpt = Checkpoint::new(model, 20, 1);
        ckpt.header.params.swap(0, 1);
        let bytes = ckpt.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
