//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `FSRCKPT1`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every section's values back to back as
//! little-endian IEEE floats of the header's dtype. The header records the
//! kind (`encoder` or `model`), dtype, configuration and the name and length
//! of each section, so a reader can validate the payload before touching it.
//! Saving and loading is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{Linear, ModelConfig, MultiTaskModel};
use crate::scalar::{Dtype, Scalar};

pub const MAGIC: &[u8; 8] = b"FSRCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Encoder,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub dtype: Dtype,
    pub encoder: EncoderConfig,
    /// Present for model checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub sections: Vec<Section>,
}

fn encode<T: Scalar>(header: &CheckpointHeader, blocks: &[&[T]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let payload: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for block in blocks {
        for &x in *block {
            x.write_le(&mut out);
        }
    }
    Ok(out)
}

fn decode<T: Scalar>(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Vec<T>>)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {:?} values, {:?} requested",
            header.dtype,
            T::DTYPE
        )));
    }
    let width = T::DTYPE.size_of();
    let mut rest = &bytes[12 + len..];
    let expected: usize = header.sections.iter().map(|s| s.len * width).sum();
    if rest.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header describes {expected}",
            rest.len()
        )));
    }
    let mut blocks = Vec::with_capacity(header.sections.len());
    for s in &header.sections {
        let (now, later) = rest.split_at(s.len * width);
        blocks.push(now.chunks_exact(width).map(T::read_le).collect());
        rest = later;
    }
    Ok((header, blocks))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn expect_sections(header: &CheckpointHeader, names: &[&str]) -> Result<()> {
    let found: Vec<&str> = header.sections.iter().map(|s| s.name.as_str()).collect();
    if found != names {
        return Err(Error::Checkpoint(format!("expected sections {names:?}, found {found:?}")));
    }
    Ok(())
}

pub fn encoder_to_bytes<T: Scalar>(encoder: &Encoder<T>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        kind: CheckpointKind::Encoder,
        dtype: T::DTYPE,
        encoder: encoder.config().clone(),
        num_classes: None,
        sections: vec![Section {
            name: "encoder".into(),
            len: encoder.num_params(),
        }],
    };
    encode(&header, &[encoder.params()])
}

pub fn encoder_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Encoder<T>> {
    let (header, mut blocks) = decode::<T>(bytes)?;
    if header.kind != CheckpointKind::Encoder {
        return Err(Error::Checkpoint("file holds a model, not an encoder".into()));
    }
    expect_sections(&header, &["encoder"])?;
    Encoder::from_params(header.encoder, blocks.remove(0))
}

const MODEL_SECTIONS: [&str; 5] = ["encoder", "task_head.weight", "task_head.bias", "rationale_head.weight", "rationale_head.bias"];

pub fn model_to_bytes<T: Scalar>(model: &MultiTaskModel<T>) -> Result<Vec<u8>> {
    let parts = model.parts();
    let header = CheckpointHeader {
        kind: CheckpointKind::Model,
        dtype: T::DTYPE,
        encoder: model.config().encoder.clone(),
        num_classes: Some(model.num_classes()),
        sections: MODEL_SECTIONS
            .iter()
            .zip(&parts)
            .map(|(n, p)| Section {
                name: (*n).into(),
                len: p.len(),
            })
            .collect(),
    };
    encode(&header, &parts)
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<MultiTaskModel<T>> {
    let (header, blocks) = decode::<T>(bytes)?;
    if header.kind != CheckpointKind::Model {
        return Err(Error::Checkpoint("file holds an encoder, not a full model".into()));
    }
    expect_sections(&header, &MODEL_SECTIONS)?;
    let num_classes = header
        .num_classes
        .ok_or_else(|| Error::Checkpoint("model header lacks num_classes".into()))?;
    let config = ModelConfig {
        encoder: header.encoder.clone(),
        num_classes,
    };
    let d = config.encoder.hidden_dim;
    let [enc, tw, tb, rw, rb]: [Vec<T>; 5] = blocks.try_into().expect("five sections checked");
    let encoder = Encoder::from_params(header.encoder, enc)?;
    let task = Linear {
        weight: tw,
        bias: tb,
        in_dim: d,
        out_dim: num_classes,
    };
    let rationale = Linear {
        weight: rw,
        bias: rb,
        in_dim: d,
        out_dim: 2,
    };
    MultiTaskModel::from_parts(config, encoder, task, rationale)
}

/// Reads only the header, e.g. to check a checkpoint against a config.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))
}

pub fn save_encoder<T: Scalar>(encoder: &Encoder<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encoder_to_bytes(encoder)?)
}

pub fn load_encoder<T: Scalar>(path: &Path) -> Result<Encoder<T>> {
    encoder_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_model<T: Scalar>(model: &MultiTaskModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<MultiTaskModel<T>> {
    model_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = MultiTaskModel::<f32>::new(tiny_config(3), 4).unwrap();
        let bytes = model_to_bytes(&m).unwrap();
        let back: MultiTaskModel<f32> = model_from_bytes(&bytes).unwrap();
        for (a, b) in m.parts().iter().zip(back.parts()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn encoder_round_trip_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let m = MultiTaskModel::<f64>::new(tiny_config(2), 9).unwrap();
        save_encoder(m.encoder(), &path).unwrap();
        let back: Encoder<f64> = load_encoder(&path).unwrap();
        assert_eq!(back.params(), m.encoder().params());
        assert_eq!(read_header(&path).unwrap().kind, CheckpointKind::Encoder);
        assert!(load_model::<f64>(&path).is_err());
    }

    #[test]
    fn wrong_dtype_and_corruption_rejected() {
        let m = MultiTaskModel::<f64>::new(tiny_config(2), 9).unwrap();
        let bytes = model_to_bytes(&m).unwrap();
        assert!(model_from_bytes::<f32>(&bytes).is_err());
        assert!(model_from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(model_from_bytes::<f64>(&bad).is_err());
    }
}
