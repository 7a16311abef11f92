//! `SRCC` checkpoints: `"SRCC" | version u32 | D u32 | h u32 | m u32 | n u32 |
//! hyper width u32`, then every tensor as little-endian `f64` in declared
//! order. A JSON sidecar (`<file>.json`) records seeds and configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ClassifierParams, ClassifierShape};
use super::ClassifierError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SRCC";
const VERSION: u32 = 1;
const HEADER: usize = 28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub shape: ClassifierShape,
    pub seed: u64,
    /// Free-form training configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub(crate) fn encode(params: &ClassifierParams) -> Vec<u8> {
    let s = params.shape();
    let mut out = Vec::with_capacity(HEADER + params.len() * 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [VERSION as usize, s.dim, s.hidden, s.classes, s.levels, s.hyper_hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in params.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ClassifierParams, ClassifierError> {
    if bytes.len() < HEADER || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ClassifierError::Format("missing SRCC magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let version = word(0) as u32;
    if version != VERSION {
        return Err(ClassifierError::UnsupportedVersion(version));
    }
    let shape = ClassifierShape {
        dim: word(1),
        hidden: word(2),
        classes: word(3),
        levels: word(4),
        hyper_hidden: word(5),
    };
    if !shape.is_valid() {
        return Err(ClassifierError::Format(format!("invalid network shape {shape:?}")));
    }
    let body = &bytes[HEADER..];
    let expected = ClassifierParams::zeros(shape).len();
    if body.len() != expected * 8 {
        return Err(ClassifierError::Format(format!(
            "expected {expected} parameters, found {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ClassifierParams::from_data(shape, data).expect("length checked");
    if !params.is_finite() {
        return Err(ClassifierError::Format("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ClassifierParams, seed: u64, config: serde_json::Value) -> Result<(), ClassifierError> {
    fs::write(path, encode(params)).map_err(|e| ClassifierError::io(path, e))?;
    let meta = CheckpointMeta {
        format_version: VERSION,
        shape: *params.shape(),
        seed,
        config,
    };
    let side = sidecar(path);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&side, json).map_err(|e| ClassifierError::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierParams, ClassifierError> {
    let bytes = fs::read(path).map_err(|e| ClassifierError::io(path, e))?;
    decode(&bytes)
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta, ClassifierError> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| ClassifierError::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ClassifierError::Format(e.to_string()))?;
    if meta.format_version != VERSION {
        return Err(ClassifierError::UnsupportedVersion(meta.format_version));
    }
    Ok(meta)
}
