//! `VVR1` volume files.
//!
//! Layout, all little-endian: `b"VVR1"`, `u32` version (1), three `u32`
//! dims, three `f32` spacings, three `f32` origins, then `nx*ny*nz` `f32`
//! samples with x varying fastest.

use std::path::Path;

use voxmark_core::VolumeGrid;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VVR1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 12 + 12;

pub fn encode(vol: &VolumeGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * vol.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in vol.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in vol.spacing() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    for o in vol.origin() {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    for v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a volume; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<VolumeGrid> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic, not a VVR1 volume"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported VVR1 version {version}")));
    }
    let dims: [usize; 3] = std::array::from_fn(|d| u32_at(bytes, 8 + 4 * d) as usize);
    let spacing: [f64; 3] = std::array::from_fn(|d| f32_at(bytes, 20 + 4 * d) as f64);
    let origin: [f64; 3] = std::array::from_fn(|d| f32_at(bytes, 32 + 4 * d) as f64);
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let payload = &bytes[HEADER_LEN..];
    match count.and_then(|c| c.checked_mul(4)) {
        Some(n) if n == payload.len() => {}
        _ => return Err(Error::format(path, format!("payload size {} does not match dims {:?}", payload.len(), dims))),
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    VolumeGrid::new(dims, spacing, origin, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write(path: &Path, vol: &VolumeGrid) -> Result<()> {
    std::fs::write(path, encode(vol)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<VolumeGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
