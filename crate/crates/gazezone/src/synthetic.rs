//! Writes a generated dataset to disk in the formats the CLI reads.
//!
//! ```text
//! <dir>/profile.json
//! <dir>/detections.csv
//! <dir>/<drive>.csv
//! <dir>/frames/<subject>/<index>.png
//! ```

use std::path::{Path, PathBuf};

use anyhow::Result;
use gazezone_core::dataset::{DriveManifest, ManifestRow};
use gazezone_core::synth::{camera_profile, generate, SynthConfig, SynthFrame};

use crate::detector::{write_detections, DetectionRecord};
use crate::frames::save_png;
use crate::manifest::format_drive_manifest;
use crate::profile::save_profile;

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub profile: PathBuf,
    pub detections: PathBuf,
    pub manifests: Vec<PathBuf>,
    /// Generated frames with their file paths, in generation order.
    pub frames: Vec<(PathBuf, SynthFrame)>,
}

impl SyntheticDataset {
    /// The generated frame stored at `path`, if any.
    pub fn frame(&self, path: &Path) -> Option<&SynthFrame> {
        self.frames.iter().find(|(p, _)| p == path).map(|(_, f)| f)
    }
}

pub fn write_synthetic(root: &Path, config: &SynthConfig) -> Result<SyntheticDataset> {
    std::fs::create_dir_all(root)?;
    let generated = generate(config);
    let profile = root.join("profile.json");
    save_profile(&profile, &camera_profile(config))?;

    let mut detections = Vec::new();
    let mut manifests: Vec<DriveManifest> = Vec::new();
    let mut frames = Vec::with_capacity(generated.len());
    for f in generated {
        let rel = format!("frames/{}", f.sample.frame_ref);
        let path = root.join(&rel);
        save_png(&path, &f.image)?;
        for b in f.passenger_face.into_iter().chain([f.driver_face]) {
            detections.push(DetectionRecord { frame_path: rel.clone(), x: b.x, y: b.y, w: b.w, h: b.h, score: 0.99 });
        }
        let row = ManifestRow { frame_path: rel.clone(), timestamp: f.sample.timestamp, zone_label: f.sample.zone.name().into() };
        match manifests.iter_mut().find(|m| m.drive_id == f.sample.drive_id) {
            Some(m) => m.rows.push(row),
            None => manifests.push(DriveManifest {
                drive_id: f.sample.drive_id.clone(),
                subject_id: f.sample.subject_id.clone(),
                camera_profile_id: camera_profile(config).profile_id,
                rows: vec![row],
            }),
        }
        frames.push((path, f));
    }
    let detections_path = root.join("detections.csv");
    write_detections(&detections_path, &detections)?;
    let mut manifest_paths = Vec::new();
    for m in &manifests {
        let path = root.join(format!("{}.csv", m.drive_id));
        std::fs::write(&path, format_drive_manifest(m))?;
        manifest_paths.push(path);
    }
    Ok(SyntheticDataset { root: root.to_path_buf(), profile, detections: detections_path, manifests: manifest_paths, frames })
}
