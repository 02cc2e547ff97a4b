//! Class activation overlays for a set of frames.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazezone_core::cam::{extract_cams, render_overlay, CamStack};
use gazezone_core::models::{HeadKind, ModelError};
use gazezone_core::zone::GazeZone;
use serde::Serialize;

use crate::eval::Evaluator;
use crate::frames::{load_rgb, save_png};
use crate::report::{contact_sheet, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct FrameCams {
    pub frame: PathBuf,
    pub predicted: GazeZone,
    pub probabilities: Vec<(GazeZone, f64)>,
    pub map_size: (usize, usize),
    /// Largest relative gap between a map's spatial mean and its logit.
    pub gap_identity_error: f64,
    pub overlays: Vec<PathBuf>,
}

/// Writes seven overlays per frame under `out/<frame stem>/`, one contact
/// sheet `out/sheet.png` (a row per frame: crop, then the seven zones) and
/// `out/cams.json`.
pub fn write_overlays(evaluator: &Evaluator, frames: &[PathBuf], size: u32, out: &Path) -> Result<Vec<FrameCams>> {
    if frames.is_empty() {
        bail!("no frames given");
    }
    if evaluator.model.spec().head_kind() != HeadKind::ConvGap {
        return Err(ModelError::NotConvGap { family: evaluator.model.spec().family })
            .context("class activation maps need a global-average-pooling head; this checkpoint has fully connected layers");
    }
    let mut records = Vec::with_capacity(frames.len());
    let mut sheet_rows = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let image = load_rgb(frame)?;
        let key = frame.to_string_lossy();
        let input = evaluator
            .preprocessor
            .prepare(&key, &image, &evaluator.detector)
            .with_context(|| format!("preprocessing {}", frame.display()))?;
        let mut cams: CamStack = extract_cams(&evaluator.model, &input.pixels)?;
        cams.source = Some(key.into_owned());
        let crop = image.resize_region(input.source, size, size);
        let stem = frame.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into());
        let frame_dir = out.join(format!("{i:03}-{stem}"));
        let mut row = vec![crop.clone()];
        let mut overlays = Vec::with_capacity(7);
        for zone in GazeZone::ALL {
            let img = render_overlay(cams.map(zone), cams.width, cams.height, &crop, size, size);
            let path = frame_dir.join(format!("{}.png", zone.name()));
            save_png(&path, &img)?;
            overlays.push(path);
            row.push(img);
        }
        save_png(&frame_dir.join("crop.png"), &crop)?;
        sheet_rows.push(row);
        log::info!("{}: predicted {}", frame.display(), cams.predicted.name());
        records.push(FrameCams {
            frame: frame.clone(),
            predicted: cams.predicted,
            probabilities: GazeZone::ALL.into_iter().map(|z| (z, cams.distribution.prob(z))).collect(),
            map_size: (cams.width, cams.height),
            gap_identity_error: cams.gap_identity_error(),
            overlays,
        });
    }
    save_png(&out.join("sheet.png"), &contact_sheet(&sheet_rows))?;
    write_json(&out.join("cams.json"), &records)?;
    Ok(records)
}
