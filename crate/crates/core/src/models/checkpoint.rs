//! `LOBM` checkpoint container.
//!
//! Layout (little-endian): magic `LOBM`, u16 version, u32 header length,
//! JSON header, the parameter tensors as f32 in header order, and a
//! trailing CRC-32 of everything before it.

use std::{fs, io::Write, path::Path};

use serde::{Deserialize, Serialize};

use super::{build_model, ArchSpec, Model, ModelError};
use crate::{
    embedding::COLUMN_LAYOUT_VERSION,
    nn::Tensor,
    sampling::{SampleSpec, TargetScaler},
};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LOBM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    seed: u64,
    spec: Option<SampleSpec>,
    column_layout_version: u32,
    scaler: TargetScaler,
    history: Vec<f64>,
    tensors: Vec<TensorMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            arch: self.arch.clone(),
            seed: self.seed,
            spec: self.spec,
            column_layout_version: COLUMN_LAYOUT_VERSION,
            scaler: self.scaler.clone(),
            history: self.history.clone(),
            tensors: self
                .params
                .params()
                .iter()
                .map(|p| TensorMeta { name: p.name.clone(), shape: p.value.shape().to_vec() })
                .collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 4 * self.params.count() + 16);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.params() {
            for &x in p.value.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("bad magic, not a checkpoint".into()));
        }
        if bytes.len() < 10 {
            return Err(ModelError::CorruptChecksum);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if body.len() < 10 || crc32fast::hash(body) != stored {
            return Err(ModelError::CorruptChecksum);
        }
        let len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
        let json = body.get(10..10 + len).ok_or(ModelError::CorruptChecksum)?;
        let h: Header = serde_json::from_slice(json).map_err(|e| ModelError::Format(e.to_string()))?;
        if h.column_layout_version != COLUMN_LAYOUT_VERSION {
            return Err(ModelError::Format(format!(
                "column layout version {} (expected {COLUMN_LAYOUT_VERSION})",
                h.column_layout_version
            )));
        }
        let mut model = build_model(&h.arch, h.seed)?;
        if model.params.len() != h.tensors.len() {
            return Err(ModelError::Format("parameter list does not match the architecture".into()));
        }
        let mut data = &body[10 + len..];
        for (i, meta) in h.tensors.iter().enumerate() {
            let current = &model.params.params()[i];
            if current.name != meta.name || current.value.shape() != meta.shape.as_slice() {
                return Err(ModelError::Format(format!("unexpected tensor {}", meta.name)));
            }
            let n: usize = meta.shape.iter().product();
            if data.len() < 4 * n {
                return Err(ModelError::Format(format!("tensor {} is truncated", meta.name)));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            *model.params.get_mut(i) = Tensor::new(meta.shape.clone(), values)?;
            data = &data[4 * n..];
        }
        if !data.is_empty() {
            return Err(ModelError::Format(format!("{} trailing bytes", data.len())));
        }
        model.spec = h.spec;
        model.scaler = h.scaler;
        model.history = h.history;
        model.provenance = h.provenance;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io { path: path.to_owned(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_owned(), source })?;
        Model::from_bytes(&bytes)
    }
}
