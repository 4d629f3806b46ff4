//! Named-array container: a JSON index followed by raw little-endian `f64` data.
//!
//! Layout: `b"DGNSARR1"`, `u64` index length, UTF-8 JSON index, payload.
//! The index maps each name to `{shape, offset, dtype: "f64"}` with `offset`
//! counted in bytes from the start of the payload; `meta` carries arbitrary JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DGNSARR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
    pub dtype: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArrayIndex {
    pub arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A named array loaded from or written to a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Writes atomically: the file is fully written to a sibling temp path and renamed.
pub fn save_arrays(path: &Path, arrays: &[NamedArray], meta: serde_json::Value) -> Result<()> {
    let mut index = ArrayIndex {
        arrays: BTreeMap::new(),
        meta,
    };
    let mut payload = Vec::new();
    for a in arrays {
        if a.shape.iter().product::<usize>() != a.values.len() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("array {} has {} values for shape {:?}", a.name, a.values.len(), a.shape),
            });
        }
        index.arrays.insert(
            a.name.clone(),
            ArrayEntry {
                shape: a.shape.clone(),
                offset: payload.len() as u64,
                dtype: "f64".into(),
            },
        );
        for v in &a.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(&index)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_arrays(path: &Path) -> Result<(Vec<NamedArray>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing container header".into()));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated index".into()))?;
    let index: ArrayIndex = serde_json::from_slice(&bytes[16..json_end])?;
    let payload = &bytes[json_end..];
    let mut out = Vec::with_capacity(index.arrays.len());
    for (name, e) in &index.arrays {
        if e.dtype != "f64" {
            return Err(bad(format!("array {name}: unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(bad(format!("array {name} runs past end of payload")));
        }
        let values = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(NamedArray {
            name: name.clone(),
            shape: e.shape.clone(),
            values,
        });
    }
    Ok((out, index.meta))
}
