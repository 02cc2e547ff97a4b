//! Face detections computed ahead of time by an external detector.
//!
//! The file is CSV with the header `frame_path,x,y,w,h,score`, one row per
//! detection. Frames without rows have no detections. Relative paths are
//! resolved against the file's directory and matched to frame paths
//! lexically.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};

use anyhow::{Context, Result};
use gazezone_core::geometry::BBox;
use gazezone_core::image::RgbImage;
use gazezone_core::preprocess::{Detection, DetectorError, FaceDetector, StrategyKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::manifest::resolve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_path: String,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub score: f32,
}

#[derive(Debug, Clone, Default)]
pub struct PrecomputedDetector {
    by_frame: HashMap<PathBuf, Vec<Detection>>,
    digest: String,
}

/// Drops `.` components and folds `..` where possible.
pub fn normalize_path(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

impl PrecomputedDetector {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading detections {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
        let mut records = Vec::new();
        for (i, r) in reader.deserialize::<DetectionRecord>().enumerate() {
            let mut r = r.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
            r.frame_path = resolve(base, &r.frame_path).to_string_lossy().into_owned();
            records.push(r);
        }
        let mut det = Self::from_records(&records);
        det.digest = hex::encode(Sha256::digest(&bytes));
        Ok(det)
    }

    pub fn from_records(records: &[DetectionRecord]) -> Self {
        let mut by_frame: HashMap<PathBuf, Vec<Detection>> = HashMap::new();
        let mut hasher = Sha256::new();
        for r in records {
            hasher.update(format!("{},{},{},{},{},{}\n", r.frame_path, r.x, r.y, r.w, r.h, r.score));
            by_frame
                .entry(normalize_path(Path::new(&r.frame_path)))
                .or_default()
                .push(Detection { bbox: BBox { x: r.x, y: r.y, w: r.w, h: r.h }, score: r.score });
        }
        Self { by_frame, digest: hex::encode(hasher.finalize()) }
    }

    /// SHA-256 of the detection source, for cache keys and run records.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn frames(&self) -> usize {
        self.by_frame.len()
    }
}

impl FaceDetector for PrecomputedDetector {
    fn detect(&self, frame_ref: &str, _frame: &RgbImage) -> Result<Vec<Detection>, DetectorError> {
        Ok(self.by_frame.get(&normalize_path(Path::new(frame_ref))).cloned().unwrap_or_default())
    }
}

/// Detections for a command: loaded from `path`, or empty when the crop
/// strategy works without a face.
pub fn open_detector(path: Option<&Path>, strategy: StrategyKind) -> Result<PrecomputedDetector> {
    match path {
        Some(p) => PrecomputedDetector::load(p),
        None if strategy.needs_face() => {
            anyhow::bail!("crop strategy `{strategy}` needs face detections; pass a detections file")
        }
        None => Ok(PrecomputedDetector::default()),
    }
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_matches_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.csv");
        std::fs::write(&path, "frame_path,x,y,w,h,score\nframes/a.png,1,2,30,40,0.9\nframes/a.png,100,2,30,40,0.5\n").unwrap();
        let det = PrecomputedDetector::load(&path).unwrap();
        let img = RgbImage::new(1, 1);
        let frame = dir.path().join("sub/../frames/./a.png");
        let found = det.detect(frame.to_str().unwrap(), &img).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].bbox, BBox { x: 1, y: 2, w: 30, h: 40 });
        assert!(det.detect("elsewhere.png", &img).unwrap().is_empty());
        assert_eq!(det.digest().len(), 64);
    }
}
