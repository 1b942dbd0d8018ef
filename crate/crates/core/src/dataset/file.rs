//! Trajectory files.
//!
//! ```text
//! b"CRTJ\x01"
//! u32 LE        header length in bytes
//! header        UTF-8 JSON (DatasetHeader)
//! per trajectory:
//!   u32 LE      number of states T
//!   T * token_len bytes of states, then T - 1 action bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Trajectory, TrajectoryDataset};
use crate::env::{EnvConfig, Puzzle, State};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"CRTJ\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: EnvConfig,
    pub count: usize,
    pub token_len: usize,
    pub max_len: usize,
    pub total_states: usize,
    pub config_hash: String,
}

pub fn dataset_bytes(ds: &TrajectoryDataset, config_hash: &str) -> Result<Vec<u8>> {
    let env = ds.env.build()?;
    let token_len = env.token_len();
    let header = DatasetHeader {
        env: ds.env.clone(),
        count: ds.len(),
        token_len,
        max_len: ds.max_len,
        total_states: ds.trajectories.iter().map(Trajectory::len).sum(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + header.total_states * (token_len + 1) + 4 * header.count + 9);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &ds.trajectories {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for s in &t.states {
            if s.len() != token_len {
                return Err(Error::Shape(format!("state with {} tokens, expected {token_len}", s.len())));
            }
            out.extend_from_slice(s.tokens());
        }
        for &a in &t.actions {
            let byte = u8::try_from(a).map_err(|_| Error::Shape(format!("action {a} does not fit a byte")))?;
            out.push(byte);
        }
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, ds: &TrajectoryDataset, config_hash: &str) -> Result<()> {
    let bytes = dataset_bytes(ds, config_hash)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated trajectory file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn parse_dataset(bytes: &[u8], path: &Path) -> Result<(DatasetHeader, TrajectoryDataset)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(DATASET_MAGIC.len())? != DATASET_MAGIC {
        return Err(Error::format(path, "not a trajectory file"));
    }
    let n = r.u32()?;
    let header: DatasetHeader = serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(path, e.to_string()))?;
    let env = header.env.build()?;
    if env.token_len() != header.token_len {
        return Err(Error::format(path, "token length does not match the environment"));
    }
    let mut trajectories = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let len = r.u32()?;
        if len == 0 {
            return Err(Error::format(path, "empty trajectory"));
        }
        let states = r.take(len * header.token_len)?.chunks(header.token_len).map(|c| State::new(c.to_vec())).collect();
        let actions = r.take(len - 1)?.iter().map(|&a| a as usize).collect();
        trajectories.push(Trajectory { env: env.id(), states, actions });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last trajectory"));
    }
    let ds = TrajectoryDataset::new(header.env.clone(), trajectories)?;
    Ok((header, ds))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, TrajectoryDataset)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes, path)
}
