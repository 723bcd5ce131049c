//! Index files.
//!
//! An index is fully determined by its model, its slot budget and the entries
//! in insertion order, so that is what the file stores; loading replays the
//! inserts. Layout, little-endian:
//!
//! ```text
//! "LNI1"            4 bytes magic
//! version           u16 (= 1)
//! total_slots       u64 (as requested at build time)
//! model_len         u64
//! model             model_len bytes, a complete model file
//! entry_count       u32
//! entries           name_len u16, name bytes, face_count u16, faces u32 each
//! crc32             u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::corpus::Name;
use crate::error::{Error, Result};
use crate::lni::{FibEntry, Lni, ModelSource};
use crate::model_io::{decode_model, encode_model, Reader};
use crate::Scalar;

pub const INDEX_MAGIC: [u8; 4] = *b"LNI1";
pub const INDEX_VERSION: u16 = 1;

/// What an index file holds before the index is rebuilt from it.
#[derive(Debug)]
pub struct IndexImage<T> {
    pub total_slots: usize,
    pub model: crate::pyramid::Pyramid<T>,
    pub entries: Vec<FibEntry>,
}

impl<T: Scalar> IndexImage<T> {
    pub fn into_index(self) -> Result<Lni<T>> {
        Lni::build(
            self.entries,
            self.total_slots,
            ModelSource::Preloaded(self.model),
        )
    }
}

/// Serializes an index built from `entries` (in insertion order) with
/// `total_slots` slots.
pub fn encode_index<T: Scalar>(lni: &Lni<T>, total_slots: usize, entries: &[FibEntry]) -> Vec<u8> {
    let model = encode_model(lni.model());
    let mut out = Vec::with_capacity(model.len() + entries.len() * 40 + 32);
    out.extend_from_slice(&INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(total_slots as u64).to_le_bytes());
    out.extend_from_slice(&(model.len() as u64).to_le_bytes());
    out.extend_from_slice(&model);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(e.faces().len() as u16).to_le_bytes());
        for f in e.faces() {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn shift(err: Error, base: usize) -> Error {
    match err {
        Error::Truncated {
            offset,
            needed,
            what,
        } => Error::Truncated {
            offset: offset + base,
            needed,
            what,
        },
        Error::Malformed { offset, reason } => Error::Malformed {
            offset: offset + base,
            reason,
        },
        other => other,
    }
}

pub fn decode_index<T: Scalar>(bytes: &[u8]) -> Result<IndexImage<T>> {
    let head = &bytes[..bytes.len().min(4)];
    if head != &INDEX_MAGIC[..head.len()] {
        return Err(Error::BadMagic {
            expected: INDEX_MAGIC,
            found: head.to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(4, "magic")?;
    let version = r.u16("version")?;
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let slots_at = r.pos;
    let total_slots = r.u64("slot count")?;
    if total_slots == 0 || total_slots > usize::MAX as u64 {
        return Err(Error::Malformed {
            offset: slots_at,
            reason: format!("slot count {total_slots} out of range"),
        });
    }
    let model_len = r.u64("model length")?;
    let model_at = r.pos;
    let model_bytes = r.take(usize::try_from(model_len).unwrap_or(usize::MAX), "model")?;
    let model = decode_model(model_bytes).map_err(|e| shift(e, model_at))?;
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(bytes.len() / 8));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let raw = r.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Malformed {
                offset: at,
                reason: "name is not UTF-8".into(),
            })
            .and_then(|s| {
                Name::new(s).map_err(|e| Error::Malformed {
                    offset: at,
                    reason: e.to_string(),
                })
            })?;
        let faces_at = r.pos;
        let nfaces = r.u16("face count")? as usize;
        let mut faces = Vec::with_capacity(nfaces);
        for _ in 0..nfaces {
            faces.push(r.u32("face")?);
        }
        entries.push(FibEntry::new(name, faces).map_err(|e| Error::Malformed {
            offset: faces_at,
            reason: e.to_string(),
        })?);
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
    Ok(IndexImage {
        total_slots: total_slots as usize,
        model,
        entries,
    })
}

pub fn save_index<T: Scalar>(
    lni: &Lni<T>,
    total_slots: usize,
    entries: &[FibEntry],
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_index(lni, total_slots, entries))?;
    Ok(())
}

pub fn load_index<T: Scalar>(path: impl AsRef<Path>) -> Result<Lni<T>> {
    decode_index(&fs::read(path)?)?.into_index()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_names, CorpusSpec};
    use crate::lni::entries_for;
    use crate::pyramid::{Pyramid, PyramidConfig};

    fn fixture() -> (Vec<FibEntry>, Lni<f64>) {
        let d = generate_names(&CorpusSpec::with_count(300, 2)).unwrap();
        let entries = entries_for(&d, 3);
        let model = Pyramid::init(&PyramidConfig::with_regions(4).seeded(9)).unwrap();
        let lni = Lni::build(entries.clone(), 1001, ModelSource::Preloaded(model)).unwrap();
        (entries, lni)
    }

    #[test]
    fn round_trip_rebuilds_the_same_index() {
        let (entries, lni) = fixture();
        let bytes = encode_index(&lni, 1001, &entries);
        let image = decode_index::<f64>(&bytes).unwrap();
        assert_eq!(image.total_slots, 1001);
        assert_eq!(image.entries, entries);
        let rebuilt = image.into_index().unwrap();
        assert_eq!(rebuilt.bitmap(), lni.bitmap());
        assert_eq!(rebuilt.stats(), lni.stats());
        assert_eq!(encode_index(&rebuilt, 1001, &entries), bytes);
    }

    #[test]
    fn file_round_trip() {
        let (entries, lni) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lni");
        save_index(&lni, 1001, &entries, &path).unwrap();
        let loaded: Lni<f64> = load_index(&path).unwrap();
        for e in &entries {
            assert_eq!(
                loaded.lookup(e.name().as_bytes()),
                lni.lookup(e.name().as_bytes())
            );
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (entries, lni) = fixture();
        let bytes = encode_index(&lni, 1001, &entries);
        assert!(matches!(
            decode_index::<f64>(b"PNN1xx"),
            Err(Error::BadMagic { .. })
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 6; // inside the final face id
        flipped[last] ^= 1;
        assert!(matches!(
            decode_index::<f64>(&flipped),
            Err(Error::Checksum { .. })
        ));
        // cut inside the embedded model's parameters
        let cut = 4 + 2 + 8 + 8 + 14 + 3 * 8 + 2;
        match decode_index::<f64>(&bytes[..cut]) {
            Err(Error::Truncated { offset, what, .. }) => {
                assert_eq!(what, "model");
                assert_eq!(offset, 22);
            }
            other => panic!("unexpected {other:?}"),
        }
        for cut in 0..bytes.len() {
            assert!(decode_index::<f64>(&bytes[..cut]).is_err());
        }
    }
}
