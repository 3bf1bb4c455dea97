//! Binary parameter container and model directories.
//!
//! Layout of `params.bin` (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GATHCKPT"
//! version  u32      currently 1
//! dtype    u8       1 = f32, 2 = f64
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rows u32, cols u32, rows·cols values
//! ```

use crate::encoder::Vocab;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Shape, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"GATHCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const MODEL_FILE: &str = "model.json";

pub fn encode_params<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let s = p.tensor.shape();
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(s.rows as u32).to_le_bytes());
        out.extend_from_slice(&(s.cols as u32).to_le_bytes());
        for &v in p.tensor.values() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Named tensors as stored, values widened to `f64`.
pub fn decode_params(bytes: &[u8]) -> Result<(DType, Vec<(String, Shape, Vec<f64>)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let code = r.take(1)?[0];
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let shape = Shape::new(r.u32()? as usize, r.u32()? as usize);
        let raw = r.take(shape.numel() * width)?;
        let values = raw
            .chunks_exact(width)
            .map(|c| match dtype {
                DType::F32 => f32::read_le(c) as f64,
                DType::F64 => f64::read_le(c),
            })
            .collect();
        out.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((dtype, out))
}

/// Overwrites `store` with checkpoint values. Names and shapes must match
/// the store exactly and in order.
pub fn load_params_into<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<DType> {
    let (dtype, tensors) = decode_params(bytes)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (name, shape, values)) in ids.into_iter().zip(tensors) {
        if store.name(id) != name || store.tensor(id).shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` {shape} does not match model tensor `{}` {}",
                store.name(id),
                store.tensor(id).shape()
            )));
        }
        let t = Tensor::new(shape, values.into_iter().map(T::real).collect())?;
        store.tensor_mut(id).values_mut().copy_from_slice(t.values());
    }
    Ok(dtype)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dtype: DType,
    config: ModelConfig,
    vocab: Vocab,
}

/// Writes `model.json` (configuration and vocabulary) and `params.bin`.
pub fn save_model<T: Real>(model: &Model<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let meta = ModelFile {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
    };
    std::fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&meta)?)?;
    std::fs::write(dir.join(PARAMS_FILE), encode_params(&model.store))?;
    Ok(())
}

pub fn load_model<T: Real>(dir: impl AsRef<Path>) -> Result<Model<T>> {
    let dir = dir.as_ref();
    let meta: ModelFile = serde_json::from_str(&std::fs::read_to_string(dir.join(MODEL_FILE))?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    let mut model = Model::new(meta.config, meta.vocab)?;
    load_params_into(&mut model.store, &std::fs::read(dir.join(PARAMS_FILE))?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::skiffle;

    fn model() -> Model<f64> {
        let vocab = Vocab::build(&[skiffle()], 100);
        Model::new(ModelConfig::default(), vocab).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        save_model(&m, dir.path()).unwrap();
        let back: Model<f64> = load_model(dir.path()).unwrap();
        for (id, p) in m.store.iter() {
            assert_eq!(p.tensor.values(), back.store.tensor(id).values());
        }
        assert_eq!(back.vocab, m.vocab);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let mut bytes = encode_params(&m.store);
        let mut store = m.store.clone();
        assert!(load_params_into(&mut store, &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(load_params_into(&mut store, &bytes).is_err());
    }

    #[test]
    fn header_layout() {
        let m = model();
        let b = encode_params(&m.store);
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes([b[8], b[9], b[10], b[11]]), 1);
        assert_eq!(b[12], DType::F64.code());
    }

    #[test]
    fn precision_can_change_on_load() {
        let m = model();
        let mut s32: ParamStore<f32> = Model::<f32>::new(m.config.clone(), m.vocab.clone()).unwrap().store;
        let d = load_params_into(&mut s32, &encode_params(&m.store)).unwrap();
        assert_eq!(d, DType::F64);
    }
}
