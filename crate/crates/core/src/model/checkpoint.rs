//! Checkpoint files: `[u64 LE header length][JSON header][f64 LE params]`.
//! Parameters are stored at full precision so a reload is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderKind, ModelState};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "tada.checkpoint.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Offset in values, not bytes, from the start of the blob.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema: String,
    pub encoder: EncoderKind,
    pub n_items: usize,
    pub dim: usize,
    pub dtype: String,
    pub sections: Vec<Section>,
    pub sha256: String,
    /// Run configuration the parameters came from.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub parent_hash: String,
    pub epoch: usize,
    pub metrics: serde_json::Value,
}

/// Caller-supplied provenance for a checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub parent_hash: String,
    pub epoch: usize,
    pub metrics: serde_json::Value,
}

fn blob(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn save_checkpoint(path: &Path, model: &ModelState, meta: &CheckpointMeta) -> Result<CheckpointHeader> {
    let bytes = blob(&model.params);
    let emb = model.embedding_len();
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA.into(),
        encoder: model.encoder,
        n_items: model.n_items,
        dim: model.dim,
        dtype: "f64_le".into(),
        sections: vec![
            Section {
                name: "embeddings".into(),
                offset: 0,
                len: emb,
            },
            Section {
                name: "encoder".into(),
                offset: emb,
                len: model.params.len() - emb,
            },
        ],
        sha256: hex::encode(Sha256::digest(&bytes)),
        config: meta.config.clone(),
        config_hash: meta.config_hash.clone(),
        parent_hash: meta.parent_hash.clone(),
        epoch: meta.epoch,
        metrics: meta.metrics.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::artifact(path, e))?;
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len());
    out.write_all(&(json.len() as u64).to_le_bytes()).expect("vec write");
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(header)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelState)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() < 8 {
        return Err(Error::artifact(path, "truncated header length"));
    }
    let hlen = u64::from_le_bytes(raw[..8].try_into().expect("8 bytes")) as usize;
    let body = raw
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| Error::artifact(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::artifact(path, e))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(Error::artifact(path, format!("unexpected schema {:?}", header.schema)));
    }
    if header.dtype != "f64_le" {
        return Err(Error::artifact(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let bytes = &raw[8 + hlen..];
    if hex::encode(Sha256::digest(bytes)) != header.sha256 {
        return Err(Error::artifact(path, "checksum mismatch"));
    }
    if bytes.len() % 8 != 0 {
        return Err(Error::artifact(path, "blob is not a whole number of f64 values"));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = ModelState {
        n_items: header.n_items,
        dim: header.dim,
        encoder: header.encoder,
        params,
    };
    let expected = model.embedding_len()
        + match model.encoder {
            EncoderKind::DecayedPooling => super::SequenceEncoder::n_params(&super::DecayedPooling, model.dim),
            EncoderKind::Gru => super::SequenceEncoder::n_params(&super::GatedRecurrent, model.dim),
        };
    if model.params.len() != expected {
        return Err(Error::artifact(
            path,
            format!("expected {expected} parameters, found {}", model.params.len()),
        ));
    }
    Ok((header, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = init_model(17, 5, EncoderKind::Gru, 3).unwrap();
        model.params[40] = 1.0 / 3.0;
        let meta = CheckpointMeta {
            epoch: 7,
            config_hash: "abc".into(),
            ..CheckpointMeta::default()
        };
        let header = save_checkpoint(&path, &model, &meta).unwrap();
        let (h, back) = load_checkpoint(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(h.epoch, 7);
        let bits = |m: &ModelState| m.params.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = init_model(4, 2, EncoderKind::DecayedPooling, 1).unwrap();
        save_checkpoint(&path, &model, &CheckpointMeta::default()).unwrap();
        let mut raw = fs::read(&path).unwrap();
        let last = raw.len() - 1;
        raw[last] ^= 1;
        fs::write(&path, &raw).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Artifact { .. })));
        fs::write(&path, [1u8, 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
