//! Named-tensor weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SIMVIT01" | u32 count | count × {
//!     u16 name_len | name (UTF-8) | u8 rank | rank × u32 dim | u8 dtype | values
//! }
//! ```
//!
//! `dtype` is 0 for `f32`, 1 for `f64`; values are raw little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::scalar::{DType, Scalar};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"SIMVIT01";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Raw little-endian element bytes.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub entries: Vec<WeightEntry>,
}

impl WeightFile {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let entries = store
            .iter()
            .map(|(name, p)| {
                let mut bytes = Vec::new();
                p.value.write_le(&mut bytes);
                WeightEntry {
                    name: name.to_string(),
                    shape: p.value.shape().to_vec(),
                    dtype: T::DTYPE,
                    bytes,
                }
            })
            .collect();
        Self { entries }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let payload: usize = self.entries.iter().map(|e| e.bytes.len() + e.name.len() + 8).sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(
            &u32::try_from(self.entries.len())
                .map_err(|_| too_big("tensor count"))?
                .to_le_bytes(),
        );
        for e in &self.entries {
            let name_len = u16::try_from(e.name.len()).map_err(|_| too_big(&e.name))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(u8::try_from(e.shape.len()).map_err(|_| too_big(&e.name))?);
            for &d in &e.shape {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big(&e.name))?.to_le_bytes());
            }
            out.push(e.dtype.tag());
            out.extend_from_slice(&e.bytes);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated("missing header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        r.pos = 8;
        let count = u32::from_le_bytes(r.take(4, "tensor count")?.try_into().expect("4")) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for i in 0..count {
            let ctx = format!("tensor #{i}");
            let name_len = u16::from_le_bytes(r.take(2, &ctx)?.try_into().expect("2")) as usize;
            let name = String::from_utf8(r.take(name_len, &ctx)?.to_vec()).map_err(|_| Error::TensorMismatch {
                name: ctx.clone(),
                detail: "name is not valid UTF-8".into(),
            })?;
            if !seen.insert(name.clone()) {
                return Err(Error::TensorMismatch {
                    name,
                    detail: "duplicate tensor name".into(),
                });
            }
            let rank = r.take(1, &name)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.take(4, &name)?.try_into().expect("4")) as usize);
            }
            let tag = r.take(1, &name)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::TensorMismatch {
                name: name.clone(),
                detail: format!("unknown dtype tag {tag}"),
            })?;
            let n: usize = shape.iter().product();
            let data = r.take(n * dtype.size_of(), &name)?.to_vec();
            entries.push(WeightEntry {
                name,
                shape,
                dtype,
                bytes: data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::TensorMismatch {
                name: "<file>".into(),
                detail: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Self { entries })
    }

    /// Overwrites `store` values; names, shapes and dtype must match exactly.
    pub fn apply_to<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for e in &self.entries {
            let id = store.lookup(&e.name).ok_or_else(|| Error::TensorMismatch {
                name: e.name.clone(),
                detail: "not a parameter of this configuration".into(),
            })?;
            let expected = store.value(id).shape();
            if expected != e.shape.as_slice() {
                return Err(Error::TensorMismatch {
                    name: e.name.clone(),
                    detail: format!("shape mismatch: file {:?}, model {:?}", e.shape, expected),
                });
            }
            if e.dtype != T::DTYPE {
                return Err(Error::TensorMismatch {
                    name: e.name.clone(),
                    detail: format!("dtype mismatch: file {}, model {}", e.dtype, T::DTYPE),
                });
            }
        }
        if self.entries.len() != store.len() {
            let present: HashSet<&str> = self.entries.iter().map(|e| e.name.as_str()).collect();
            let missing = store
                .iter()
                .map(|(n, _)| n)
                .find(|n| !present.contains(n))
                .unwrap_or("<unknown>");
            return Err(Error::TensorMismatch {
                name: missing.to_string(),
                detail: "missing from weight file".into(),
            });
        }
        let size = T::DTYPE.size_of();
        for e in &self.entries {
            let id = store.lookup(&e.name).expect("checked above");
            let data = e.bytes.chunks_exact(size).map(T::read_le).collect();
            *store.value_mut(id) = Tensor::new(e.shape.clone(), data)?;
        }
        Ok(())
    }
}

fn too_big(what: &str) -> Error {
    Error::TensorMismatch {
        name: what.to_string(),
        detail: "exceeds the format's field width".into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{ctx}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn encode_model<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    WeightFile::from_store(&model.store).encode()
}

/// Builds `config` and fills it from encoded weights.
pub fn decode_model<T: Scalar>(bytes: &[u8], config: &ModelConfig) -> Result<Model<T>> {
    let file = WeightFile::decode(bytes)?;
    let mut model = build_model(config, 0)?;
    file.apply_to(&mut model.store)?;
    Ok(model)
}

pub fn save_weights<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model<T>> {
    decode_model(&std::fs::read(path)?, config)
}
