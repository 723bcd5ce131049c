//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "PNN1"            4 bytes magic
//! version           u16 (= 1)
//! input_dim N       u16
//! hidden h          u16
//! regions R         u32
//! 1 + R networks    level 1 first, then level 2 in region order; each is
//!                   W1 (h x N, row-major), b1 (h), W2 (1 x h), b2 (1)
//!                   as IEEE-754 binary64
//! crc32             u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::bpnn::Network;
use crate::error::{Error, Result};
use crate::pyramid::Pyramid;
use crate::Scalar;

pub const MODEL_MAGIC: [u8; 4] = *b"PNN1";
pub const MODEL_VERSION: u16 = 1;
/// Bytes before the first network.
pub const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4;

pub fn encode_model<T: Scalar>(model: &Pyramid<T>) -> Vec<u8> {
    let n = model.input_dim();
    let h = model.hidden();
    let per_net = h * n + h + h + 1;
    let mut out = Vec::with_capacity(HEADER_LEN + (1 + model.regions()) * per_net * 8 + 4);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(model.regions() as u32).to_le_bytes());
    for net in std::iter::once(model.level1()).chain(model.level2()) {
        for p in net.params() {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: len - available,
                what,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = self.take(8, what)?;
            values.push(f64::from_le_bytes(raw.try_into().unwrap()));
        }
        Ok(values)
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<Pyramid<T>> {
    let head = &bytes[..bytes.len().min(4)];
    if head != &MODEL_MAGIC[..head.len()] {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found: head.to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(4, "magic")?;
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims_at = r.pos;
    let n = r.u16("input dimension")? as usize;
    let h = r.u16("hidden width")? as usize;
    let regions = r.u32("region count")? as usize;
    if n == 0 || h == 0 || regions == 0 {
        return Err(Error::Malformed {
            offset: dims_at,
            reason: format!("zero dimension in header (N={n}, hidden={h}, R={regions})"),
        });
    }
    let body = (1 + regions) as u128 * (h * n + h + h + 1) as u128 * 8;
    if body + 4 > (bytes.len() - r.pos) as u128 {
        // walk the values anyway so the error names the first missing one
        for _ in 0..=regions {
            read_network::<T>(&mut r, n, h)?;
        }
        r.u32("checksum")?;
    }
    let level1 = read_network(&mut r, n, h)?;
    let mut level2 = Vec::with_capacity(regions);
    for _ in 0..regions {
        level2.push(read_network(&mut r, n, h)?);
    }
    let crc_at = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Malformed {
            offset: r.pos,
            reason: format!("{} trailing bytes after checksum", bytes.len() - r.pos),
        });
    }
    let computed = crc32fast::hash(&bytes[..crc_at]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Pyramid::from_networks(level1, level2)
}

fn read_network<T: Scalar>(r: &mut Reader<'_>, n: usize, h: usize) -> Result<Network<T>> {
    let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    let w1 = conv(r.f64s(h * n, "W1")?);
    let b1 = conv(r.f64s(h, "b1")?);
    let w2 = conv(r.f64s(h, "W2")?);
    let b2 = conv(r.f64s(1, "b2")?);
    Network::from_parts((n, h, 1), w1, b1, w2, b2)
}

pub fn save_model<T: Scalar>(model: &Pyramid<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Pyramid<T>> {
    decode_model(&fs::read(path)?)
}

/// CRC-32 stored in the trailer of an encoded model.
pub fn model_crc(encoded: &[u8]) -> Option<u32> {
    let tail = encoded.len().checked_sub(4)?;
    Some(u32::from_le_bytes(encoded[tail..].try_into().ok()?))
}
