//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MPLX" | version: u32 | count: u32 | record*
//! record = name_len: u32 | name: utf-8 | dtype: u8 | rank: u32 | extents: u64*rank
//!        | value payload | frozen: u8 | adam_step: u64 | m payload | v payload
//! ```
//!
//! Payloads are raw little-endian scalars of the record's dtype.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{AdamState, ParamEntry, ParamStore};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MPLX";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, e) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(S::DTYPE as u8);
        let shape = e.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in e.value.data() {
            v.write_le(&mut out);
        }
        out.push(e.frozen as u8);
        out.extend_from_slice(&e.adam.step.to_le_bytes());
        for &v in e.adam.m.data() {
            v.write_le(&mut out);
        }
        for &v in e.adam.v.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn payload<S: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<S>> {
        let n: usize = shape.iter().product();
        let w = S::DTYPE.width();
        let bytes = self.take(n * w)?;
        let data = bytes.chunks_exact(w).map(S::read_le).collect();
        Tensor::new(shape, data)
    }
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<ParamStore<S>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an MPLX checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("parameter name: {e}")))?
            .to_string();
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
        if dtype != S::DTYPE {
            return Err(Error::Format(format!(
                "`{name}` stored as {dtype:?}, loading as {:?}",
                S::DTYPE
            )));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let value = r.payload(&shape)?;
        let frozen = r.u8()? != 0;
        let step = r.u64()?;
        let m = r.payload(&shape)?;
        let v = r.payload(&shape)?;
        store.insert_entry(
            &name,
            ParamEntry {
                value,
                frozen,
                adam: AdamState { m, v, step },
            },
        )?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(store)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store))
}

pub fn load<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store(vals: &[f64], frozen: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("dec.out.0.W", Tensor::from_f64(&[vals.len()], vals).unwrap())
            .unwrap();
        s.insert("enc.stage0.f_emb.0.b", Tensor::from_f64(&[1, 1], &[-0.0]).unwrap())
            .unwrap();
        s.set_frozen("dec.out.0.W", frozen).unwrap();
        s
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(-1e6f64..1e6, 1..32), frozen: bool) {
            let mut s = sample_store(&vals, frozen);
            let g = std::collections::HashMap::from([(
                "enc.stage0.f_emb.0.b".to_string(),
                Tensor::from_f64(&[1, 1], &[0.3]).unwrap(),
            )]);
            s.adam_step(&g, &crate::params::AdamConfig::with_lr(1e-3)).unwrap();
            let bytes = encode(&s);
            let back: ParamStore<f64> = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            for (name, e) in s.iter() {
                let b = back.entry(name).unwrap();
                prop_assert_eq!(b.frozen, e.frozen);
                prop_assert_eq!(b.adam.step, e.adam.step);
                for (x, y) in e.value.data().iter().zip(b.value.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_dtype() {
        let bytes = encode(&sample_store(&[1.0], false));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f64>(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode::<f64>(&bad), Err(Error::Version { found: 9, .. })));
        assert!(decode::<f32>(&bytes).is_err());
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mplx");
        let s = sample_store(&[0.1, 0.2], true);
        save(&s, &p).unwrap();
        assert_eq!(load::<f64>(&p).unwrap(), s);
        assert!(!p.with_extension("tmp").exists());
    }
}
