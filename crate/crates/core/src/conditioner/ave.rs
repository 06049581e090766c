//! `.ave` embedding files: `AVEM`, u32 version, u32 L, u32 T_v, u32 D, then
//! `L * T_v * D` f32 values; all little-endian, layer-major then time then
//! dim.

use std::path::Path;

use super::LayerEmbeddings;
use crate::error::{Error, Result};

pub const AVE_MAGIC: &[u8; 4] = b"AVEM";
pub const AVE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn write_embeddings(path: impl AsRef<Path>, e: &LayerEmbeddings) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + e.data().len() * 4);
    buf.extend_from_slice(AVE_MAGIC);
    for v in [AVE_VERSION, e.layers() as u32, e.frames() as u32, e.dim() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in e.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|err| Error::io(path, err))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<LayerEmbeddings> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|err| Error::io(path, err))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != AVE_MAGIC {
        return Err(Error::format(path, "bad magic, expected AVEM"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, layers, frames, dim) = (word(0), word(1), word(2), word(3));
    if version != AVE_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = (layers as usize)
        .checked_mul(frames as usize)
        .and_then(|n| n.checked_mul(dim as usize))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < count {
        return Err(Error::format(
            path,
            format!("truncated: header needs {count} data bytes, found {}", body.len()),
        ));
    }
    if body.len() > count {
        return Err(Error::format(path, "trailing bytes after data"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LayerEmbeddings::new(layers as usize, frames as usize, dim as usize, data)
        .map_err(|e| Error::format(path, e.to_string()))
}
