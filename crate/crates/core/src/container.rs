//! CPDT: the binary tensor container used for every on-disk tensor.
//!
//! Layout, in order, with no padding and no checksum:
//!
//! ```text
//! offset 0   magic  b"CPDT"
//! offset 4   u16 LE version (currently 1)
//! offset 6   u8  dtype code (0 = f32 little-endian)
//! offset 7   u8  ndim (>= 1)
//! offset 8   ndim x u32 LE extents (each >= 1)
//! then       row-major payload, extents product x 4 bytes
//! ```
//!
//! Decoding is strict: wrong magic, unknown version or dtype, zero extents,
//! truncated or oversized payloads, and non-finite payload values all fail
//! with the byte offset at which the problem was detected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CPDT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// Serializes a tensor to CPDT bytes.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn fail(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Decodes CPDT bytes into a tensor.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 {
        return Err(fail(bytes.len(), "header truncated"));
    }
    if bytes[0..4] != MAGIC {
        return Err(fail(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(fail(6, format!("unknown dtype code {}", bytes[6])));
    }
    let ndim = bytes[7] as usize;
    if ndim == 0 {
        return Err(fail(7, "ndim must be >= 1"));
    }
    let extents_end = 8 + 4 * ndim;
    if bytes.len() < extents_end {
        return Err(fail(bytes.len(), "extent list truncated"));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count = 1usize;
    for i in 0..ndim {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(fail(off, "zero extent"));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| fail(off, "extent product overflow"))?;
        shape.push(d);
    }
    let expected = extents_end + 4 * count;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!(
                "payload truncated: expected {} bytes, found {}",
                expected - extents_end,
                bytes.len() - extents_end
            ),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = extents_end + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(off, "non-finite payload value"));
        }
        data.push(v);
    }
    Tensor::new(shape, data)
}

/// Writes a tensor to a CPDT file.
pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    fs::write(path, encode(t)).map_err(Error::io(path))
}

/// Reads a tensor from a CPDT file.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes)
}
