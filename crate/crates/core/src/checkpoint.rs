//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! - magic `GLIB` (4 bytes)
//! - u32 format version (currently 1)
//! - u32 config length, then that many bytes of JSON-encoded [`ModelConfig`]
//! - per tensor, in canonical model order: u16 name length, UTF-8 name,
//!   u8 ndim, u32 per dimension, then raw little-endian f32 data
//!
//! Round-trips are bitwise lossless. Bad magic, unknown version, and
//! truncation each surface as their own error.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GLIB";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model to the checkpoint format.
pub fn checkpoint_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::CorruptCheckpoint(format!("config encode: {e}")))?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for (name, tensor) in model.named_tensors() {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let version = cursor.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedCheckpointVersion(version));
    }
    let config_len = cursor.u32()? as usize;
    let config_bytes = cursor.take(config_len)?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("config block: {e}")))?;

    let mut tensors: HashMap<String, Tensor<f32>> = HashMap::new();
    while !cursor.done() {
        let name_len = cursor.u16()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cursor.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cursor.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cursor.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::CorruptCheckpoint(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::CorruptCheckpoint(format!("duplicate tensor {name}")));
        }
    }
    Model::from_named_tensors(config, tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedCheckpoint);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rational;

    fn desk_model() -> Model<f32> {
        let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
        Model::build(cfg, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_lossless() {
        let model = desk_model();
        let bytes = checkpoint_bytes(&model).unwrap();
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        for ((na, ta), (nb, tb)) in model.named_tensors().iter().zip(loaded.named_tensors()) {
            assert_eq!(na, &nb);
            let raw_a: Vec<u32> = ta.data().iter().map(|x| x.to_bits()).collect();
            let raw_b: Vec<u32> = tb.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(raw_a, raw_b, "tensor {na} changed across round trip");
        }
        assert_eq!(checkpoint_bytes(&loaded).unwrap(), bytes);
    }

    #[test]
    fn wrong_magic_is_not_a_checkpoint() {
        let mut bytes = checkpoint_bytes(&desk_model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::NotACheckpoint)));
    }

    #[test]
    fn wrong_version_detected() {
        let mut bytes = checkpoint_bytes(&desk_model()).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::UnsupportedCheckpointVersion(9))
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = checkpoint_bytes(&desk_model()).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(checkpoint_from_bytes(cut), Err(Error::TruncatedCheckpoint)));
        assert!(matches!(checkpoint_from_bytes(&bytes[..2]), Err(Error::TruncatedCheckpoint)));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("glitchkit_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let model = desk_model();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(
            checkpoint_bytes(&model).unwrap(),
            checkpoint_bytes(&loaded).unwrap()
        );
    }
}
