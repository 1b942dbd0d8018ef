//! Checkpoint files.
//!
//! ```text
//! b"CRTR\x01"
//! u32 LE        header length in bytes
//! header        UTF-8 JSON (CheckpointHeader)
//! f32 LE ...    parameter tensors in EncoderParams::tensors() order,
//!               then, if header.adam_step is set, every first-moment
//!               tensor followed by every second-moment tensor (same order)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::encoder::{EncoderArch, EncoderParams};
use crate::contrastive::SimilarityMetric;
use crate::env::EnvConfig;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CRTR\x01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Contrastive,
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelKind,
    pub arch: EncoderArch,
    pub metric: Option<SimilarityMetric>,
    pub env: EnvConfig,
    pub step: u64,
    pub config_hash: String,
    /// Adam step counter when optimizer moments are stored.
    pub adam_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: EncoderParams,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.arch = self.params.arch;
        header.adam_step = self.adam.as_ref().map(|a| a.step);
        let json = serde_json::to_vec(&header)?;
        let n = self.params.num_params();
        let mut out = Vec::with_capacity(9 + json.len() + 4 * n * 3);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |t: &[f32]| {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for t in self.params.tensors() {
            push(t);
        }
        if let Some(adam) = &self.adam {
            for t in adam.first.iter().chain(&adam.second) {
                push(t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(path, why);
        if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(bad("missing CRTR\\x01 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let body = bytes.get(9..9 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        header.arch.validate()?;
        let mut floats = bytes[9 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if !(bytes.len() - 9 - hlen).is_multiple_of(4) {
            return Err(bad("tensor section is not a whole number of f32"));
        }
        let mut params = EncoderParams::zeros(header.arch);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = floats.next().ok_or_else(|| bad("truncated parameters"))?;
            }
        }
        let adam = match header.adam_step {
            None => None,
            Some(step) => {
                let mut st = AdamState::new(&params);
                st.step = step;
                for t in st.first.iter_mut().chain(st.second.iter_mut()) {
                    for v in t.iter_mut() {
                        *v = floats.next().ok_or_else(|| bad("truncated optimizer state"))?;
                    }
                }
                Some(st)
            }
        };
        if floats.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(Self { header, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save leaves the last good file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
