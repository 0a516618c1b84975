//! Flat tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CLRSCKPT"
//! version  u32      1
//! length   u64      byte length of the JSON index
//! index    JSON     {"version":1,"entries":[{"name","shape","offset","count"}],"meta":...}
//! values   f32 * Σcount, row-major, entries in index order
//! ```
//!
//! `offset` and `count` are measured in values, not bytes. Used for model
//! checkpoints and for raw video fixtures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CLRSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    version: u32,
    entries: Vec<IndexEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub struct Archive {
    pub entries: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copies values into `store`; names and shapes must match exactly.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "archive has {} entries, model expects {}",
                self.entries.len(),
                store.len()
            )));
        }
        for (name, tensor) in &self.entries {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            store.set(id, tensor.clone())?;
        }
        Ok(())
    }
}

pub fn write_archive<W: Write>(
    mut w: W,
    entries: &[(&str, &Tensor)],
    meta: &serde_json::Value,
) -> Result<()> {
    let mut offset = 0;
    let index_entries = entries
        .iter()
        .map(|(name, t)| {
            let e = IndexEntry {
                name: (*name).to_string(),
                shape: t.shape().to_vec(),
                offset,
                count: t.numel(),
            };
            offset += t.numel();
            e
        })
        .collect();
    let index = Index {
        version: VERSION,
        entries: index_entries,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&index).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in entries {
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Archive> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let index: Index =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut entries = Vec::with_capacity(index.entries.len());
    let mut expected_offset = 0;
    for e in index.entries {
        if e.offset != expected_offset || e.count != e.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("inconsistent index entry {}", e.name)));
        }
        expected_offset += e.count;
        let mut raw = vec![0u8; e.count * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        entries.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Archive {
        entries,
        meta: index.meta,
    })
}

pub fn save_params(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = store.iter().collect();
    write_archive(BufWriter::new(File::create(path)?), &entries, meta)
}

pub fn load(path: &Path) -> Result<Archive> {
    read_archive(BufReader::new(File::open(path)?))
}
