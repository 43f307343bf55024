//! File formats and command implementations for the pose6d binary:
//! BOP-layout annotation JSON, PLY meshes, raster blobs, results CSV,
//! binary checkpoints, metric reports (CSV/JSON/SVG), and the dataset
//! directory produced by `gen-data`.

pub mod bop;
pub mod checkpoint_io;
pub mod commands;
pub mod dataset;
pub mod ply;
pub mod raster_io;
pub mod report_io;
pub mod results_io;
pub mod run_config;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoFormatError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("validation error in image {image_id}: {msg}")]
    Validation { image_id: u32, msg: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoFormatError {
    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
