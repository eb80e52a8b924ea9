//! Binary checkpoint format.
//!
//! `"SNPK"`, a version byte, then per tensor: u16 name length, UTF-8 name,
//! u8 dtype code, u8 ndim, u32 dims, raw data. All integers little-endian.

use std::path::Path;

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNPK";
pub const CHECKPOINT_VERSION: u8 = 0x01;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u32>,
    /// Little-endian element bytes.
    pub data: Vec<u8>,
}

impl TensorRecord {
    fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn encode_records(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    for r in records {
        let name_len = u16::try_from(r.name.len())
            .map_err(|_| Error::Argument(format!("tensor name `{}` too long", r.name)))?;
        let ndim = u8::try_from(r.dims.len()).map_err(|_| Error::Argument(format!("`{}` has too many dims", r.name)))?;
        if r.data.len() != r.element_count() * r.dtype.size() {
            return Err(Error::Invariant(format!("`{}` data length disagrees with dims", r.name)));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.code());
        out.push(ndim);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&r.data);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("`{name}`: unknown dtype code {code}")))?;
        let ndim = r.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(r.take(4, "dims")?.try_into().unwrap()));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|c| c.checked_mul(dtype.size()))
            .ok_or_else(|| Error::Format(format!("`{name}`: dims overflow")))?;
        let data = r.take(count, &format!("data of `{name}`"))?.to_vec();
        records.push(TensorRecord { name, dtype, dims, data });
    }
    Ok(records)
}

impl<T: Scalar> Model<T> {
    /// Serializes every parameter and running statistic.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut records = Vec::new();
        for (name, dims, values) in self.tensors() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor `{name}` (refusing to save)")));
            }
            let mut data = Vec::with_capacity(values.len() * T::DTYPE.size());
            for v in values {
                v.write_le(&mut data);
            }
            let dims = dims
                .iter()
                .map(|&d| u32::try_from(d).map_err(|_| Error::Size(format!("`{name}` dim {d} exceeds u32"))))
                .collect::<Result<_>>()?;
            records.push(TensorRecord {
                name,
                dtype: T::DTYPE,
                dims,
                data,
            });
        }
        encode_records(&records)
    }

    /// Replaces parameters from checkpoint bytes. Everything is validated
    /// before the model is touched.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let records = decode_records(bytes)?;
        let mut slots = self.slots_mut();
        for (i, slot) in slots.iter().enumerate() {
            let Some(rec) = records.get(i) else {
                return Err(Error::Compatibility(format!("checkpoint is missing tensor `{}`", slot.name)));
            };
            if rec.name != slot.name {
                return Err(Error::Compatibility(format!(
                    "tensor {i}: checkpoint has `{}`, model expects `{}`",
                    rec.name, slot.name
                )));
            }
            if rec.dtype != T::DTYPE {
                return Err(Error::Compatibility(format!(
                    "`{}`: checkpoint dtype {}, model dtype {}",
                    rec.name,
                    rec.dtype,
                    T::DTYPE
                )));
            }
            let dims: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
            if dims != slot.dims {
                return Err(Error::Compatibility(format!(
                    "`{}`: checkpoint dims {:?}, model dims {:?}",
                    rec.name, dims, slot.dims
                )));
            }
        }
        if let Some(extra) = records.get(slots.len()) {
            return Err(Error::Compatibility(format!("unknown tensor `{}` in checkpoint", extra.name)));
        }
        let size = T::DTYPE.size();
        for (slot, rec) in slots.iter_mut().zip(&records) {
            for (v, chunk) in slot.value.iter_mut().zip(rec.data.chunks_exact(size)) {
                *v = T::read_le(chunk);
            }
        }
        self.mark_updated();
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.checkpoint_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.load_checkpoint_bytes(&bytes)
    }
}
