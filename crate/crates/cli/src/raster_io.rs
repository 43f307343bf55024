//! Raster blobs: a fixed little-endian binary layout (magic, dimensions,
//! then f32 channel data) for the synthetic rasters.

use std::path::Path;

use pose6d::synth::{Raster, RASTER_CHANNELS};

use crate::IoFormatError;

const MAGIC: &[u8; 4] = b"P6DR";
const VERSION: u32 = 1;

pub fn write_raster(path: &Path, raster: &Raster) -> Result<(), IoFormatError> {
    let mut out = Vec::with_capacity(16 + raster.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(raster.height as u32).to_le_bytes());
    out.extend_from_slice(&(raster.width as u32).to_le_bytes());
    out.extend_from_slice(&(RASTER_CHANNELS as u32).to_le_bytes());
    for v in &raster.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    crate::write_atomic(path, &out)?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<Raster, IoFormatError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(IoFormatError::parse(path, 0, "bad raster magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(IoFormatError::Unsupported(format!(
            "raster format version {version}"
        )));
    }
    let height = word(8) as usize;
    let width = word(12) as usize;
    let channels = word(16) as usize;
    if channels != RASTER_CHANNELS {
        return Err(IoFormatError::Unsupported(format!(
            "raster channel count {channels}"
        )));
    }
    let expected = 20 + height * width * channels * 4;
    if bytes.len() != expected {
        return Err(IoFormatError::parse(path, 0, "raster body size mismatch"));
    }
    let mut data = Vec::with_capacity(height * width * channels);
    for chunk in bytes[20..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok(Raster {
        height,
        width,
        data,
    })
}
