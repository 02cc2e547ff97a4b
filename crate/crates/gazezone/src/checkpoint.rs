//! Binary parameter files: fine-tuned checkpoints and backbone weights.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic      8 bytes   "GZCKPT01" or "GZWGHT01"
//! header_len u32
//! header     JSON
//! values     f32 per parameter, in header order
//! digest     32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use gazezone_core::models::{Backbone, BackboneSpec, GazeModel, ModelError, NamedArray, WeightsLocator};
use gazezone_core::preprocess::Normalization;
use gazezone_core::training::TrainConfig;
use gazezone_core::zone::GazeZone;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const CHECKPOINT_MAGIC: &[u8; 8] = b"GZCKPT01";
const WEIGHTS_MAGIC: &[u8; 8] = b"GZWGHT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a {expected} file")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: file is truncated")]
    Truncated { path: PathBuf },
    #[error("{path}: content digest mismatch, the file is corrupt")]
    Corrupt { path: PathBuf },
    #[error("{path}: SHA-256 is {found}, expected {expected}")]
    Checksum { path: PathBuf, expected: String, found: String },
    #[error("{path}: bad header: {source}")]
    Header { path: PathBuf, source: serde_json::Error },
    #[error("{path}: zone order {found:?} differs from this build's {expected:?}")]
    ZoneOrder { path: PathBuf, expected: Vec<String>, found: Vec<String> },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Metadata stored with a fine-tuned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: BackboneSpec,
    pub variable_resolution: bool,
    /// Input size the model was fine-tuned at.
    pub resolution: u32,
    pub strategy: String,
    pub normalization: Normalization,
    pub zones: Vec<String>,
    pub epoch: Option<u32>,
    pub train_config: Option<TrainConfig>,
    /// SHA-256 of the canonical JSON of `train_config`.
    pub train_config_fingerprint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    arrays: Vec<ArrayInfo>,
}

pub fn zone_names() -> Vec<String> {
    GazeZone::ALL.iter().map(|z| z.name().to_string()).collect()
}

pub fn config_fingerprint(config: &TrainConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(config).expect("config serializes")))
}

pub fn file_sha256(path: &Path) -> Result<String, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn encode<M: Serialize>(magic: &[u8; 8], meta: &M, arrays: &[NamedArray]) -> Vec<u8> {
    let header = Header {
        meta,
        arrays: arrays.iter().map(|a| ArrayInfo { name: a.name.clone(), shape: a.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let values: usize = arrays.iter().map(|a| a.values.len()).sum();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * values + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        for v in &a.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub(crate) fn decode<M: for<'de> Deserialize<'de>>(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 8],
    kind: &'static str,
) -> Result<(M, Vec<NamedArray>), CheckpointError> {
    let truncated = || CheckpointError::Truncated { path: path.into() };
    if bytes.len() < 12 + 32 || &bytes[..8] != magic {
        return Err(CheckpointError::BadMagic { path: path.into(), expected: kind });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt { path: path.into() });
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let json = body.get(12..12 + header_len).ok_or_else(truncated)?;
    let header: Header<M> =
        serde_json::from_slice(json).map_err(|source| CheckpointError::Header { path: path.into(), source })?;
    let mut rest = &body[12 + header_len..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for info in header.arrays {
        let n: usize = info.shape.iter().product();
        let raw = rest.get(..4 * n).ok_or_else(truncated)?;
        rest = &rest[4 * n..];
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push(NamedArray { name: info.name, shape: info.shape, values });
    }
    if !rest.is_empty() {
        return Err(CheckpointError::Corrupt { path: path.into() });
    }
    Ok((header.meta, arrays))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.into(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    // Write then rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn save_checkpoint(path: &Path, model: &GazeModel, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    write_bytes(path, &encode(CHECKPOINT_MAGIC, meta, &model.export()))
}

pub fn load_checkpoint(path: &Path) -> Result<(GazeModel, CheckpointMeta), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    let (meta, arrays): (CheckpointMeta, _) = decode(path, &bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let expected = zone_names();
    if meta.zones != expected {
        return Err(CheckpointError::ZoneOrder { path: path.into(), expected, found: meta.zones });
    }
    let model = GazeModel::from_params(meta.spec.clone(), meta.variable_resolution, &arrays)
        .map_err(|source| CheckpointError::Model { path: path.into(), source })?;
    Ok((model, meta))
}

/// Metadata of a backbone weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub family: gazezone_core::models::Family,
    pub width_divisor: u32,
    pub note: String,
}

pub fn save_weights(path: &Path, backbone: &Backbone, note: &str) -> Result<(), CheckpointError> {
    let meta = WeightsMeta {
        family: backbone.spec().family,
        width_divisor: backbone.spec().width_divisor,
        note: note.to_string(),
    };
    write_bytes(path, &encode(WEIGHTS_MAGIC, &meta, &backbone.export()))
}

/// Builds the pretrained backbone `spec` names: stand-in weights are
/// generated, weight files are checked against their SHA-256 (when one is
/// given) and loaded.
pub fn load_backbone(spec: &BackboneSpec) -> Result<Backbone, CheckpointError> {
    let (path, sha256) = match &spec.weights {
        WeightsLocator::StandIn { .. } => {
            return Backbone::pretrained(spec.clone()).map_err(|source| CheckpointError::Model { path: PathBuf::new(), source })
        }
        WeightsLocator::File { path, sha256 } => (PathBuf::from(path), sha256.clone()),
    };
    let bytes = fs::read(&path).map_err(|source| CheckpointError::Io { path: path.clone(), source })?;
    if let Some(expected) = sha256 {
        let found = hex::encode(Sha256::digest(&bytes));
        if !found.eq_ignore_ascii_case(&expected) {
            return Err(CheckpointError::Checksum { path, expected, found });
        }
    }
    let (_meta, arrays): (WeightsMeta, _) = decode(&path, &bytes, WEIGHTS_MAGIC, "weights")?;
    let model_err = |source| CheckpointError::Model { path: path.clone(), source };
    let mut backbone = Backbone::architecture(spec.clone(), 0).map_err(model_err)?;
    backbone.load(&arrays).map_err(model_err)?;
    Ok(backbone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gazezone_core::models::{adapt_head, make_variable_resolution, stand_in_model, Family};
    use gazezone_core::nn::Tensor;

    fn meta(model: &GazeModel) -> CheckpointMeta {
        let config = TrainConfig::for_family(Family::SqueezeNet);
        CheckpointMeta {
            spec: model.spec().clone(),
            variable_resolution: model.accepts_variable_resolution(),
            resolution: 224,
            strategy: "half-face".into(),
            normalization: Normalization::default(),
            zones: zone_names(),
            epoch: Some(3),
            train_config_fingerprint: Some(config_fingerprint(&config)),
            train_config: Some(config),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gzck");
        let model = make_variable_resolution(stand_in_model(Family::SqueezeNet, 16, 4).unwrap()).unwrap();
        save_checkpoint(&path, &model, &meta(&model)).unwrap();
        let (back, m) = load_checkpoint(&path).unwrap();
        assert_eq!(back.export(), model.export());
        assert!(back.accepts_variable_resolution());
        assert_eq!(m, meta(&model));
        let x = Tensor::zeros(3, 96, 96);
        assert_eq!(back.forward(&x).unwrap().logits, model.forward(&x).unwrap().logits);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gzck");
        let model = stand_in_model(Family::SqueezeNet, 16, 4).unwrap();
        save_checkpoint(&path, &model, &meta(&model)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt { .. })));
        fs::write(&path, b"nonsense").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn weights_are_verified_and_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sq.gzwt");
        let stand_in = BackboneSpec::new(Family::SqueezeNet, WeightsLocator::StandIn { seed: 8 }).with_width_divisor(16);
        let original = Backbone::pretrained(stand_in).unwrap();
        save_weights(&path, &original, "test").unwrap();
        let digest = file_sha256(&path).unwrap();
        let locator = |sha256| WeightsLocator::File { path: path.to_string_lossy().into_owned(), sha256 };
        let spec = BackboneSpec::new(Family::SqueezeNet, locator(Some(digest.clone()))).with_width_divisor(16);
        let loaded = load_backbone(&spec).unwrap();
        assert_eq!(loaded.export(), original.export());
        // Head surgery keeps the loaded layers.
        let adapted = adapt_head(loaded, 1).unwrap();
        assert_eq!(adapted.export()[0], original.export()[0]);

        let wrong = BackboneSpec::new(Family::SqueezeNet, locator(Some("00".repeat(32)))).with_width_divisor(16);
        assert!(matches!(load_backbone(&wrong), Err(CheckpointError::Checksum { .. })));
        let other_width = BackboneSpec::new(Family::SqueezeNet, locator(None)).with_width_divisor(8);
        assert!(matches!(load_backbone(&other_width), Err(CheckpointError::Model { .. })));
        let missing = BackboneSpec::new(Family::SqueezeNet, WeightsLocator::File { path: "/nope".into(), sha256: None });
        assert!(matches!(load_backbone(&missing), Err(CheckpointError::Io { .. })));
    }
}
