//! Drive and cross-dataset manifest files.
//!
//! A drive manifest is a small header followed by one CSV row per frame:
//!
//! ```text
//! # drive_id: d01
//! # subject_id: s01
//! # camera_profile_id: cabin-a
//! frame_path,timestamp_s,zone_name
//! frames/000000.png,0.000,Forward
//! ```
//!
//! Relative frame paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use gazezone_core::dataset::{DriveManifest, ManifestRow};
use gazezone_core::evaluation::{ColumbiaRow, PoseGazeConfiguration};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: missing `# {key}:` header line")]
    MissingHeader { path: PathBuf, key: &'static str },
    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
}

pub fn read_drive_manifest(path: &Path) -> Result<DriveManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    parse_drive_manifest(&text, path)
}

/// Parses manifest text; `path` is used for error messages and to resolve
/// relative frame paths.
pub fn parse_drive_manifest(text: &str, path: &Path) -> Result<DriveManifest, ManifestError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut drive_id = None;
    let mut subject_id = None;
    let mut camera_profile_id = None;
    let mut rows = Vec::new();
    let line_err = |line: usize, message: String| ManifestError::Line { path: path.into(), line, message };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if let Some((key, value)) = header.split_once(':') {
                let value = value.trim().to_string();
                match key.trim() {
                    "drive_id" => drive_id = Some(value),
                    "subject_id" => subject_id = Some(value),
                    "camera_profile_id" => camera_profile_id = Some(value),
                    _ => {}
                }
            }
            continue;
        }
        if rows.is_empty() && line.replace(' ', "").eq_ignore_ascii_case("frame_path,timestamp_s,zone_name") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(line_err(line_no, format!("expected `frame_path,timestamp_s,zone_name`, got {} field(s)", fields.len())));
        }
        let timestamp = fields[1]
            .parse::<f64>()
            .map_err(|_| line_err(line_no, format!("timestamp `{}` is not a number", fields[1])))?;
        rows.push(ManifestRow {
            frame_path: resolve(base, fields[0]).to_string_lossy().into_owned(),
            timestamp,
            zone_label: fields[2].to_string(),
        });
    }
    let missing = |key| ManifestError::MissingHeader { path: path.into(), key };
    Ok(DriveManifest {
        drive_id: drive_id.ok_or_else(|| missing("drive_id"))?,
        subject_id: subject_id.ok_or_else(|| missing("subject_id"))?,
        camera_profile_id: camera_profile_id.ok_or_else(|| missing("camera_profile_id"))?,
        rows,
    })
}

/// Writes a manifest in the format [`parse_drive_manifest`] reads. Frame
/// paths are written as given.
pub fn format_drive_manifest(manifest: &DriveManifest) -> String {
    let mut out = format!(
        "# drive_id: {}\n# subject_id: {}\n# camera_profile_id: {}\nframe_path,timestamp_s,zone_name\n",
        manifest.drive_id, manifest.subject_id, manifest.camera_profile_id
    );
    for r in &manifest.rows {
        out.push_str(&format!("{},{},{}\n", r.frame_path, r.timestamp, r.zone_label));
    }
    out
}

pub(crate) fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Deserialize)]
struct ColumbiaRecord {
    subject_id: String,
    head_pose_deg: i32,
    h_gaze_deg: i32,
    v_gaze_deg: i32,
    image_path: String,
}

/// Reads a cross-dataset manifest with the header
/// `subject_id,head_pose_deg,h_gaze_deg,v_gaze_deg,image_path`.
pub fn read_columbia_manifest(path: &Path) -> Result<Vec<ColumbiaRow>, ManifestError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ManifestError::Line { path: path.into(), line: 0, message: e.to_string() })?;
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<ColumbiaRecord>().enumerate() {
        let r = record.map_err(|e| ManifestError::Line { path: path.into(), line: i + 2, message: e.to_string() })?;
        rows.push(ColumbiaRow {
            subject_id: r.subject_id,
            configuration: PoseGazeConfiguration {
                head_pose_deg: r.head_pose_deg,
                h_gaze_deg: r.h_gaze_deg,
                v_gaze_deg: r.v_gaze_deg,
            },
            image_path: resolve(base, &r.image_path).to_string_lossy().into_owned(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "# drive_id: d01\n# subject_id: s01\n# camera_profile_id: cam\nframe_path,timestamp_s,zone_name\na.png,0.0,Forward\nb.png,0.033,Left\n/abs/c.png,0.066,EyesClosed\n";

    #[test]
    fn parses_header_and_rows() {
        let m = parse_drive_manifest(TEXT, Path::new("/data/d01/manifest.csv")).unwrap();
        assert_eq!((m.drive_id.as_str(), m.subject_id.as_str(), m.camera_profile_id.as_str()), ("d01", "s01", "cam"));
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[0].frame_path, "/data/d01/a.png");
        assert_eq!(m.rows[2].frame_path, "/abs/c.png");
        assert_eq!(m.rows[1].zone_label, "Left");
    }

    #[test]
    fn round_trips_through_text() {
        let m = parse_drive_manifest(TEXT, Path::new("m.csv")).unwrap();
        assert_eq!(parse_drive_manifest(&format_drive_manifest(&m), Path::new("m.csv")).unwrap(), m);
    }

    #[test]
    fn reports_bad_lines_and_headers() {
        let bad = TEXT.replace("0.033", "soon");
        let err = parse_drive_manifest(&bad, Path::new("m.csv")).unwrap_err().to_string();
        assert!(err.contains("line 6") && err.contains("soon"), "{err}");
        let headless = TEXT.replace("# subject_id: s01\n", "");
        assert!(matches!(
            parse_drive_manifest(&headless, Path::new("m.csv")),
            Err(ManifestError::MissingHeader { key: "subject_id", .. })
        ));
    }
}
