//! Checkpoint files: one magic line, one JSON header line, then every
//! parameter as little-endian `f32` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};
use crate::network::{Architecture, LayerSpec, Model};
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"GADCKPT 1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingKind {
    Classifier,
    Regressor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    seed: u64,
    class_names: Vec<String>,
    kind: TrainingKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub class_names: Vec<String>,
    pub kind: TrainingKind,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            architecture: self.model.arch.clone(),
            seed: self.model.seed,
            class_names: self.class_names.clone(),
            kind: self.kind,
        };
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header)?);
        out.push(b'\n');
        for p in &self.model.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| GadError::MalformedHeader("missing magic line".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| GadError::MalformedHeader("unterminated header".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| GadError::MalformedHeader(e.to_string()))?;
        let blob = &rest[nl + 1..];
        let arch = header.architecture;
        let heads = arch
            .validate()
            .map_err(|e| GadError::MalformedHeader(e.to_string()))?;
        if header.class_names.len() != heads {
            return Err(GadError::SpecMismatch(format!(
                "{} class names for a {heads}-way head",
                header.class_names.len()
            )));
        }
        let expected = arch.param_count() * 4;
        if blob.len() != expected {
            if let Some(implied) = implied_head(&arch, blob.len()) {
                return Err(GadError::SpecMismatch(format!(
                    "header declares {heads} classes, blob holds a {implied}-way head"
                )));
            }
            return Err(GadError::Truncated {
                expected,
                found: blob.len(),
            });
        }
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut params = Vec::new();
        for (_, shape) in arch.param_layout() {
            let len: usize = shape.iter().product();
            params.push(Tensor::new(shape, values.by_ref().take(len).collect())?);
        }
        Ok(Checkpoint {
            model: Model::new(arch, params, header.seed)?,
            class_names: header.class_names,
            kind: header.kind,
        })
    }
}

/// Head width a blob of `bytes` would imply if only the final layer differed.
fn implied_head(arch: &Architecture, bytes: usize) -> Option<usize> {
    let Some(&LayerSpec::Dense { inputs, outputs }) = arch.layers.last() else {
        return None;
    };
    if !bytes.is_multiple_of(4) {
        return None;
    }
    let body = arch.param_count() - outputs * (inputs + 1);
    let head = (bytes / 4).checked_sub(body)?;
    (head % (inputs + 1) == 0 && head > 0).then_some(head / (inputs + 1))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| GadError::io(parent, e))?;
    }
    fs::write(path, ckpt.encode()?).map_err(|e| GadError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| GadError::io(path, e))?;
    Checkpoint::decode(&bytes)
}
