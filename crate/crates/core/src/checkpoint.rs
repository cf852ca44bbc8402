//! `PNRF` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content                                  |
//! |-------|------------------------------------------|
//! | 4     | magic `PNRF`                             |
//! | 4     | `u32` format version (1)                 |
//! | 12    | `u32` nx, ny, nz                         |
//! | 48    | `f64` bbox min xyz, then max xyz         |
//! | 4n    | `f32` raw density                        |
//! | 12n   | `f32` raw color, RGB interleaved          |

use std::fs;
use std::path::Path;

use crate::error::{PnrError, Result};
use crate::field::{Bbox, FieldParams, GridDims};
use crate::io::write_atomic;

pub const MAGIC: [u8; 4] = *b"PNRF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 12 + 48;

/// Serializes a field. Raw values are narrowed to `f32`.
pub fn encode(params: &FieldParams) -> Vec<u8> {
    let dims = params.dims();
    let bbox = params.bbox();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [dims.nx, dims.ny, dims.nz] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in bbox.min.iter().chain(&bbox.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in params.raw() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FieldParams> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(PnrError::Format("missing PNRF magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(PnrError::Payload(format!(
            "header truncated: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());

    let version = u32_at(4);
    if version != VERSION {
        return Err(PnrError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let dims = GridDims::new(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize)
        .map_err(|e| PnrError::Format(e.to_string()))?;
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        min[a] = f64_at(20 + 8 * a);
        max[a] = f64_at(44 + 8 * a);
    }
    let bbox = Bbox::new(min, max).map_err(|e| PnrError::Format(e.to_string()))?;

    let count = dims
        .voxel_count()
        .checked_mul(4)
        .ok_or_else(|| PnrError::Format("grid dims overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(PnrError::Payload(format!(
            "expected {} payload bytes for {}x{}x{}, found {}",
            4 * count,
            dims.nx,
            dims.ny,
            dims.nz,
            payload.len()
        )));
    }
    let raw = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FieldParams::from_flat(dims, bbox, raw).map_err(|e| PnrError::Payload(e.to_string()))
}

pub fn save_checkpoint(params: &FieldParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FieldParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PnrError::io(path, e))?;
    decode(&bytes)
}
