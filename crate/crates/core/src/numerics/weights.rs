//! Binary weight container.
//!
//! Layout: magic `RITW`, format version `u32`, entry count `u32`, then per
//! entry `{name length u16, UTF-8 name, dtype u8 (0 = f32, 1 = f64),
//! rank u8, extents u64[rank], raw little-endian data}`. All integers are
//! little-endian. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RITW";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Result<DType> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::InvalidData(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// One named array in the container, kept as raw little-endian bytes so
/// writes reproduce reads exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub extents: Vec<u64>,
    pub raw: Vec<u8>,
}

impl Entry {
    pub fn from_f64(name: impl Into<String>, extents: &[u64], values: &[f64]) -> Entry {
        debug_assert_eq!(extents.iter().product::<u64>() as usize, values.len());
        let mut raw = Vec::with_capacity(values.len() * 8);
        for v in values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        Entry {
            name: name.into(),
            dtype: DType::F64,
            extents: extents.to_vec(),
            raw,
        }
    }

    pub fn from_f32(name: impl Into<String>, extents: &[u64], values: &[f32]) -> Entry {
        debug_assert_eq!(extents.iter().product::<u64>() as usize, values.len());
        let mut raw = Vec::with_capacity(values.len() * 4);
        for v in values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        Entry {
            name: name.into(),
            dtype: DType::F32,
            extents: extents.to_vec(),
            raw,
        }
    }

    /// Values widened to f64 regardless of stored precision.
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F64 => self
                .raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => self
                .raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        }
    }
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidData(format!("entry name too long: {}", e.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.dtype.code());
        buf.push(e.extents.len() as u8);
        for x in &e.extents {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let expect = e.extents.iter().product::<u64>() as usize * e.dtype.width();
        if e.raw.len() != expect {
            return Err(Error::InvalidData(format!(
                "entry {}: {} raw bytes, extents expect {expect}",
                e.name,
                e.raw.len()
            )));
        }
        buf.extend_from_slice(&e.raw);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::InvalidData(format!(
                "truncated weight container {path:?}"
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::InvalidData(format!("bad magic in {path:?}")));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::InvalidData(format!(
            "unsupported container version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|e| Error::InvalidData(format!("bad entry name: {e}")))?;
        let dtype = DType::from_code(take(&mut off, 1)?[0])?;
        let rank = take(&mut off, 1)?[0] as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        let n = extents.iter().product::<u64>() as usize * dtype.width();
        let raw = take(&mut off, n)?.to_vec();
        entries.push(Entry {
            name,
            dtype,
            extents,
            raw,
        });
    }
    if off != bytes.len() {
        return Err(Error::InvalidData(format!(
            "{} trailing bytes in {path:?}",
            bytes.len() - off
        )));
    }
    Ok(entries)
}

/// Writes named tensors as f64 entries, in the given order.
pub fn save_named_tensors(path: &Path, named: &[(String, Tensor)]) -> Result<()> {
    let entries: Vec<Entry> = named
        .iter()
        .map(|(name, t)| {
            let extents: Vec<u64> = t.shape().iter().map(|&d| d as u64).collect();
            Entry::from_f64(name.clone(), &extents, &t.to_vec())
        })
        .collect();
    write_container(path, &entries)
}

/// Reads a container into name -> (shape, values) form.
pub fn load_named_arrays(path: &Path) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
    let mut out = BTreeMap::new();
    for e in read_container(path)? {
        let shape: Vec<usize> = e.extents.iter().map(|&d| d as usize).collect();
        let values = e.to_f64();
        out.insert(e.name, (shape, values));
    }
    Ok(out)
}

/// Copies values from a loaded container into existing named tensors.
/// Every tensor must be present with a matching shape.
pub fn assign_named_tensors(
    loaded: &BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    named: &[(String, Tensor)],
) -> Result<()> {
    for (name, t) in named {
        let (shape, values) = loaded
            .get(name)
            .ok_or_else(|| Error::InvalidData(format!("weight container missing {name}")))?;
        if shape != t.shape() {
            return Err(Error::InvalidData(format!(
                "weight {name}: container shape {shape:?}, model expects {:?}",
                t.shape()
            )));
        }
        t.set_data(values);
    }
    Ok(())
}
