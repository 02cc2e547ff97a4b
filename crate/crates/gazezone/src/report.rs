//! Report files: confusion matrices, histograms, grids and contact sheets.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use gazezone_core::evaluation::{AblationGrid, AccuracySummary, CellOutcome, ConfigurationHistogram, ResolutionRow};
use gazezone_core::geometry::BBox;
use gazezone_core::image::RgbImage;
use gazezone_core::metrics::{round2, ConfusionMatrix};
use gazezone_core::zone::{GazeZone, ZONE_COUNT};
use serde::Serialize;

use crate::frames::save_png;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn header() -> String {
    let mut out = String::from("truth\\predicted");
    for z in GazeZone::ALL {
        out.push(',');
        out.push_str(z.name());
    }
    out.push('\n');
    out
}

/// Counts with truth zones as rows and predicted zones as columns.
pub fn confusion_counts_csv(cm: &ConfusionMatrix) -> String {
    let mut out = header();
    for z in GazeZone::ALL {
        out.push_str(z.name());
        for c in cm.row(z.ordinal()) {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Row percentages with two decimals; rows without samples are left blank.
pub fn confusion_percent_csv(cm: &ConfusionMatrix) -> String {
    let mut out = header();
    for (z, row) in GazeZone::ALL.into_iter().zip(cm.percentages()) {
        out.push_str(z.name());
        for p in row {
            match p {
                Some(p) => {
                    let _ = write!(out, ",{:.2}", round2(p));
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
pub struct ConfusionReport<'a> {
    pub zones: Vec<&'static str>,
    pub counts: Vec<&'a [u64]>,
    #[serde(flatten)]
    pub summary: &'a AccuracySummary,
}

/// Writes `confusion.csv`, `confusion_percent.csv` and `summary.json` into `dir`.
pub fn write_confusion(dir: &Path, cm: &ConfusionMatrix) -> Result<AccuracySummary> {
    let summary = AccuracySummary::of(cm)?;
    write_text(&dir.join("confusion.csv"), &confusion_counts_csv(cm))?;
    write_text(&dir.join("confusion_percent.csv"), &confusion_percent_csv(cm))?;
    let report = ConfusionReport {
        zones: GazeZone::ALL.iter().map(|z| z.name()).collect(),
        counts: (0..ZONE_COUNT).map(|i| cm.row(i)).collect(),
        summary: &summary,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(summary)
}

fn configuration_name(h: &ConfigurationHistogram) -> String {
    let c = h.configuration;
    format!("pose{:+}_h{:+}_v{:+}", c.head_pose_deg, c.h_gaze_deg, c.v_gaze_deg)
}

pub fn histograms_csv(hists: &[ConfigurationHistogram]) -> String {
    let mut out = String::from("head_pose_deg,h_gaze_deg,v_gaze_deg");
    for z in GazeZone::ALL {
        let _ = write!(out, ",{}", z.name());
    }
    out.push_str(",classified,expected,entropy,majority\n");
    for h in hists {
        let c = h.configuration;
        let _ = write!(out, "{},{},{}", c.head_pose_deg, c.h_gaze_deg, c.v_gaze_deg);
        for n in h.counts {
            let _ = write!(out, ",{n}");
        }
        let majority = h.majority.map(|z| z.name()).unwrap_or("");
        let _ = writeln!(out, ",{},{},{:.4},{}", h.classified, h.expected_subjects, h.entropy, majority);
    }
    out
}

const ZONE_COLOURS: [[u8; 3]; ZONE_COUNT] =
    [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75], [127, 127, 127]];

/// Bar chart of per-zone fractions, one bar per zone in zone order.
pub fn bar_chart(fractions: &[f64; ZONE_COUNT]) -> RgbImage {
    const BAR: i64 = 16;
    const GAP: i64 = 6;
    const HEIGHT: i64 = 100;
    let width = GAP + ZONE_COUNT as i64 * (BAR + GAP);
    let mut img = RgbImage::filled(width as u32, (HEIGHT + 2 * GAP) as u32, [255, 255, 255]);
    img.fill_rect(BBox { x: 0, y: HEIGHT + GAP, w: width, h: 1 }, [0, 0, 0]);
    for (i, &f) in fractions.iter().enumerate() {
        let h = (f.clamp(0.0, 1.0) * HEIGHT as f64).round() as i64;
        let x = GAP + i as i64 * (BAR + GAP);
        img.fill_rect(BBox { x, y: HEIGHT + GAP - h, w: BAR, h }, ZONE_COLOURS[i]);
    }
    img
}

/// Writes `histograms.json`, `histograms.csv` and one bar chart per configuration.
pub fn write_histograms(dir: &Path, hists: &[ConfigurationHistogram]) -> Result<()> {
    write_json(&dir.join("histograms.json"), hists)?;
    write_text(&dir.join("histograms.csv"), &histograms_csv(hists))?;
    for h in hists {
        save_png(&dir.join("charts").join(format!("{}.png", configuration_name(h))), &bar_chart(&h.fractions))?;
    }
    Ok(())
}

pub fn grid_csv(grid: &AblationGrid) -> String {
    let mut out = String::from("backbone,strategy,macro_accuracy,reference,status\n");
    for c in &grid.cells {
        let reference = c.reference.map(|r| format!("{r:.2}")).unwrap_or_default();
        match &c.outcome {
            CellOutcome::Done { macro_accuracy, .. } => {
                let _ = writeln!(out, "{},{},{:.2},{},ok", c.family.name(), c.strategy, round2(*macro_accuracy), reference);
            }
            CellOutcome::Failed { reason } => {
                let _ = writeln!(out, "{},{},,{},\"failed: {}\"", c.family.name(), c.strategy, reference, reason.replace('"', "'"));
            }
        }
    }
    out
}

pub fn write_grid(dir: &Path, grid: &AblationGrid) -> Result<()> {
    write_json(&dir.join("grid.json"), grid)?;
    write_text(&dir.join("grid.csv"), &grid_csv(grid))?;
    write_text(&dir.join("grid.txt"), &grid.to_table())
}

pub fn resolution_table(rows: &[ResolutionRow]) -> String {
    let mut out = format!("{:>10} {:>8} {:>8} {:>10}\n", "resolution", "macro", "micro", "reference");
    for r in rows {
        let reference = r.reference.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:>10} {:>8.2} {:>8.2} {:>10}", r.resolution, r.macro_accuracy, r.micro_accuracy, reference);
    }
    out
}

pub fn write_resolution(dir: &Path, rows: &[ResolutionRow]) -> Result<()> {
    write_json(&dir.join("resolution.json"), rows)?;
    write_text(&dir.join("resolution.txt"), &resolution_table(rows))
}

/// Tiles equally sized images into rows with a small white margin.
pub fn contact_sheet(rows: &[Vec<RgbImage>]) -> RgbImage {
    const MARGIN: u32 = 4;
    let tile_w = rows.iter().flatten().map(RgbImage::width).max().unwrap_or(1);
    let tile_h = rows.iter().flatten().map(RgbImage::height).max().unwrap_or(1);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let width = MARGIN + cols * (tile_w + MARGIN);
    let height = MARGIN + rows.len() as u32 * (tile_h + MARGIN);
    let mut sheet = RgbImage::filled(width.max(1), height.max(1), [255, 255, 255]);
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let (x0, y0) = (MARGIN + c as u32 * (tile_w + MARGIN), MARGIN + r as u32 * (tile_h + MARGIN));
            for y in 0..tile.height() {
                for x in 0..tile.width() {
                    sheet.put(x0 + x, y0 + y, tile.get(x, y));
                }
            }
        }
    }
    sheet
}
