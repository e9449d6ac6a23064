//! Middlebury `.flo` files: `202021.25f32 | width u32 | height u32 |`
//! row-major interleaved `(u, v)` pixel displacements, all little-endian.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::diffarray::Array;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode(flow: &FlowField<f32>) -> Vec<u8> {
    let (h, w) = flow.dims();
    let px = flow.to_pixels();
    let (us, vs) = px.data().split_at(h * w);
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for (u, v) in us.iter().zip(vs) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format {
        what: ".flo file",
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<FlowField<f32>> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|s| s.try_into().expect("4 bytes"))
            .ok_or_else(|| malformed("truncated header"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(malformed("bad magic"));
    }
    let w = u32::from_le_bytes(word(1)?) as usize;
    let h = u32::from_le_bytes(word(2)?) as usize;
    let n = w
        .checked_mul(h)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| malformed("dimensions overflow"))?;
    let body = &bytes[12..];
    if body.len() != 8 * n {
        return Err(malformed(format!(
            "{w}x{h} flow needs {} payload bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let mut px = vec![0f32; 2 * n];
    for (i, pair) in body.chunks_exact(8).enumerate() {
        px[i] = f32::from_le_bytes(pair[..4].try_into().expect("4 bytes"));
        px[n + i] = f32::from_le_bytes(pair[4..].try_into().expect("4 bytes"));
    }
    FlowField::from_pixels(&Array::new([2, h, w], px)?)
}

pub fn write_flo(path: &Path, flow: &FlowField<f32>) -> Result<()> {
    fs::write(path, encode(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
