//! JSONL manifests: a versioned header line followed by one clip record per line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::records::{AudioStatus, ClipRecord, Split};

pub const FORMAT: &str = "colors-manifest";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
}

impl Default for Header {
    fn default() -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
        }
    }
}

pub fn write_manifest<W: Write>(mut w: W, records: &[ClipRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &Header::default())?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    write_manifest(file, records)
}

/// Training manifests carry only clips whose audio passed filtering.
pub fn save_training_manifest(path: &Path, records: &[ClipRecord]) -> Result<usize> {
    let kept = training_records(records);
    save_manifest(path, &kept)?;
    Ok(kept.len())
}

pub fn training_records(records: &[ClipRecord]) -> Vec<ClipRecord> {
    records
        .iter()
        .filter(|r| r.audio_status == Some(AudioStatus::Ok))
        .cloned()
        .collect()
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ClipRecord>> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DataError::Manifest("empty manifest".into()))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| DataError::Manifest(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(DataError::Manifest(format!(
            "unsupported {} v{}",
            header.format, header.version
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| DataError::Manifest(format!("line {}: {e}", i + 2)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    read_manifest(BufReader::new(fs::File::open(path)?))
}

pub fn in_split(records: &[ClipRecord], split: Split) -> Vec<ClipRecord> {
    records.iter().filter(|r| r.split == Some(split)).cloned().collect()
}
