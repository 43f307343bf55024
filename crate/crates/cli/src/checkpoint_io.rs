//! Checkpoint files: a JSON manifest (format version, config echo, named
//! shapes with byte offsets, optimizer metadata, RNG positions) followed by
//! raw little-endian f32 parameter blobs.

use std::path::Path;

use pose6d::models::{CheckpointData, OptimizerBlob};
use serde::{Deserialize, Serialize};

use crate::IoFormatError;

const MAGIC: &[u8; 4] = b"P6CK";

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    name: String,
    rows: usize,
    cols: usize,
    /// Element offset into the f32 blob section.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerManifest {
    step: u64,
    first: Vec<BlobRef>,
    second: Vec<BlobRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    config: Vec<(String, String)>,
    params: Vec<BlobRef>,
    optimizer: Option<OptimizerManifest>,
    rng: Vec<(String, u64)>,
}

pub fn write_checkpoint(path: &Path, data: &CheckpointData) -> Result<(), IoFormatError> {
    let mut blobs: Vec<f32> = Vec::new();
    let mut push_blob = |items: &[(String, (usize, usize), Vec<f64>)]| -> Vec<BlobRef> {
        items
            .iter()
            .map(|(name, (rows, cols), values)| {
                let offset = blobs.len();
                blobs.extend(values.iter().map(|v| *v as f32));
                BlobRef {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                    offset,
                    len: values.len(),
                }
            })
            .collect()
    };
    let params = push_blob(&data.params);
    let optimizer = data.optimizer.as_ref().map(|o| OptimizerManifest {
        step: o.step,
        first: push_blob(&o.first_moments),
        second: push_blob(&o.second_moments),
    });
    let manifest = Manifest {
        format_version: data.format_version,
        kind: data.kind.clone(),
        config: data.config.clone(),
        params,
        optimizer,
        rng: data.rng_positions.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for v in &blobs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    crate::write_atomic(path, &out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData, IoFormatError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(IoFormatError::parse(path, 0, "bad checkpoint magic"));
    }
    let manifest_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + manifest_len {
        return Err(IoFormatError::parse(path, 0, "truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + manifest_len])?;
    let blob_bytes = &bytes[12 + manifest_len..];
    if blob_bytes.len() % 4 != 0 {
        return Err(IoFormatError::parse(path, 0, "blob section misaligned"));
    }
    let blobs: Vec<f32> = blob_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let take = |refs: &[BlobRef]| -> Result<Vec<(String, (usize, usize), Vec<f64>)>, IoFormatError> {
        refs.iter()
            .map(|r| {
                if r.offset + r.len > blobs.len() || r.len != r.rows * r.cols {
                    return Err(IoFormatError::parse(
                        path,
                        0,
                        format!("blob {} out of bounds", r.name),
                    ));
                }
                Ok((
                    r.name.clone(),
                    (r.rows, r.cols),
                    blobs[r.offset..r.offset + r.len]
                        .iter()
                        .map(|v| *v as f64)
                        .collect(),
                ))
            })
            .collect()
    };
    Ok(CheckpointData {
        format_version: manifest.format_version,
        kind: manifest.kind,
        config: manifest.config,
        params: take(&manifest.params)?,
        optimizer: match manifest.optimizer {
            Some(o) => Some(OptimizerBlob {
                step: o.step,
                first_moments: take(&o.first)?,
                second_moments: take(&o.second)?,
            }),
            None => None,
        },
        rng_positions: manifest.rng,
    })
}
