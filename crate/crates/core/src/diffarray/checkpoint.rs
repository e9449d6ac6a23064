//! Binary container for named `f32` parameter arrays.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "WSEG" | version: u8 = 1 | entry*
//! entry = name_len | name (UTF-8) | rank | dim[rank] | f32 LE values
//! ```
//!
//! Entries run to end of file.

use std::fs;
use std::path::Path;

use super::array::Array;
use super::params::ParamSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSEG";
pub const VERSION: u8 = 1;

pub fn encode(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for (name, array) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
        for &d in array.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| malformed("missing magic"))? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| malformed("parameter name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed("shape overflow"))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| malformed("shape overflow"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.insert(name, Array::new(shape, data)?)?;
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet<f32>) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("enc.w", Array::new([2, 1, 1, 1], vec![1.5, -0.25]).unwrap())
            .unwrap();
        p.insert(
            "b",
            Array::new([3], vec![0.0, f32::MIN_POSITIVE, 7.0]).unwrap(),
        )
        .unwrap();
        p
    }

    #[test]
    fn golden_bytes() {
        let mut p = ParamSet::new();
        p.insert("a", Array::new([1], vec![1.0f32]).unwrap())
            .unwrap();
        let bytes = encode(&p);
        let expected: Vec<u8> = [
            b"WSEG".as_slice(),
            &[1],
            &1u32.to_le_bytes(),
            b"a",
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        assert_eq!(decode(&encode(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(decode(&bad).is_err());
    }
}
