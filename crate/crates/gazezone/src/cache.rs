//! On-disk cache of prepared examples.
//!
//! Preparing a split means decoding every frame, finding the driver's face
//! and resampling the crop. The result only depends on the frames, the
//! preprocessor and the detections, so it is stored under a digest of those
//! in the directory named by `GAZEZONE_CACHE_DIR`. Without that variable
//! nothing is cached.

use std::path::{Path, PathBuf};

use anyhow::Result;
use gazezone_core::dataset::LabeledSample;
use gazezone_core::models::NamedArray;
use gazezone_core::nn::Tensor;
use gazezone_core::preprocess::{FaceDetector, Preprocessor};
use gazezone_core::training::{prepare_examples, Example, Prepared};
use gazezone_core::zone::GazeZone;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{decode, encode, write_bytes};
use crate::frames::load_rgb;

pub const CACHE_DIR_ENV: &str = "GAZEZONE_CACHE_DIR";

const MAGIC: &[u8; 8] = b"GZEXMP01";

#[derive(Serialize, Deserialize)]
struct Meta {
    zones: Vec<GazeZone>,
    no_face: Vec<String>,
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Digest identifying one preparation job. Frame files contribute their
/// size and modification time so edited frames miss the cache.
pub fn cache_key(samples: &[LabeledSample], preprocessor: &Preprocessor, detector_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(MAGIC);
    let settings = serde_json::json!({
        "profile": preprocessor.profile,
        "strategy": preprocessor.strategy,
        "resolution": preprocessor.resolution,
        "normalization": preprocessor.normalization,
        "detector": detector_digest,
    });
    h.update(settings.to_string());
    for s in samples {
        let stamp = std::fs::metadata(&s.frame_ref)
            .ok()
            .map(|m| (m.len(), m.modified().ok().and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())));
        h.update(format!("{}\t{}\t{:?}\n", s.frame_ref, s.zone.name(), stamp));
    }
    hex::encode(h.finalize())
}

fn store(path: &Path, prepared: &Prepared) -> Result<()> {
    let meta = Meta { zones: prepared.examples.iter().map(|e| e.zone).collect(), no_face: prepared.no_face.clone() };
    let arrays: Vec<NamedArray> = prepared
        .examples
        .iter()
        .map(|e| NamedArray { name: e.frame_ref.clone(), shape: e.input.shape().to_vec(), values: e.input.data().to_vec() })
        .collect();
    Ok(write_bytes(path, &encode(MAGIC, &meta, &arrays))?)
}

fn fetch(path: &Path) -> Result<Prepared> {
    let bytes = std::fs::read(path)?;
    let (meta, arrays): (Meta, _) = decode(path, &bytes, MAGIC, "example cache")?;
    anyhow::ensure!(meta.zones.len() == arrays.len(), "{}: zone list does not match the examples", path.display());
    let examples = arrays
        .into_iter()
        .zip(meta.zones)
        .map(|(a, zone)| {
            anyhow::ensure!(a.shape.len() == 3, "{}: example `{}` is not a 3-d tensor", path.display(), a.name);
            Ok(Example { input: Tensor::from_vec(a.shape[0], a.shape[1], a.shape[2], a.values), frame_ref: a.name, zone })
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { examples, no_face: meta.no_face })
}

/// Prepares `samples`, reading from and writing to the cache when enabled.
pub fn prepare_cached<D: FaceDetector + ?Sized>(
    samples: &[LabeledSample],
    preprocessor: &Preprocessor,
    detector: &D,
    detector_digest: &str,
) -> Result<Prepared> {
    let entry = cache_dir().map(|dir| dir.join(format!("{}.gzex", cache_key(samples, preprocessor, detector_digest))));
    if let Some(path) = entry.as_deref().filter(|p| p.exists()) {
        match fetch(path) {
            Ok(p) => {
                log::debug!("example cache hit {}", path.display());
                return Ok(p);
            }
            Err(e) => log::warn!("ignoring unreadable cache entry: {e:#}"),
        }
    }
    let prepared = prepare_examples(samples, preprocessor, detector, |r| load_rgb(Path::new(r))).map_err(|e| match e {
        gazezone_core::training::PrepareError::Load { source, .. } => source,
        other => anyhow::anyhow!(other.to_string()),
    })?;
    if let Some(path) = entry {
        if let Err(e) = store(&path, &prepared) {
            log::warn!("could not write example cache {}: {e:#}", path.display());
        }
    }
    Ok(prepared)
}
