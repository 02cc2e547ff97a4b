//! Labeled frames, drive manifests and event segmentation.
//!
//! Frames arrive as per-drive manifests, become [`LabeledSample`]s through
//! [`ingest`], and are grouped into fixation [`Event`]s by
//! [`segment_events`]. Class balancing lives in [`balance`](mod@balance) and
//! the train/validation/test partitions in [`split`].

pub mod balance;
pub mod split;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zone::GazeZone;

pub use balance::{balance, BalanceConfig};
pub use split::{
    carve_validation, split_cross_subject, split_temporal, CarveConfig, DatasetSplit, SplitKind,
    SplitOutcome, TemporalFractions,
};

/// Default maximum intra-event gap, in seconds.
pub const DEFAULT_GAP_THRESHOLD_S: f64 = 0.5;

/// One annotated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub frame_ref: String,
    pub subject_id: String,
    pub drive_id: String,
    pub timestamp: f64,
    pub zone: GazeZone,
}

impl LabeledSample {
    pub fn new(
        frame_ref: impl Into<String>,
        subject_id: impl Into<String>,
        drive_id: impl Into<String>,
        timestamp: f64,
        zone: GazeZone,
    ) -> Result<Self, DatasetError> {
        let s = Self {
            frame_ref: frame_ref.into(),
            subject_id: subject_id.into(),
            drive_id: drive_id.into(),
            timestamp,
            zone,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.subject_id.is_empty() || self.drive_id.is_empty() {
            return Err(DatasetError::MissingIdentity { frame_ref: self.frame_ref.clone() });
        }
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return Err(DatasetError::BadTimestamp {
                frame_ref: self.frame_ref.clone(),
                timestamp: self.timestamp,
            });
        }
        Ok(())
    }
}

/// A raw manifest row; the label is still text at this point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub frame_path: String,
    pub timestamp: f64,
    pub zone_label: String,
}

/// Frames of one drive by one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveManifest {
    pub drive_id: String,
    pub subject_id: String,
    pub camera_profile_id: String,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowProblem {
    UnknownLabel(String),
    UnreadableFrame,
    BadTimestamp(f64),
    TimestampDecreased { previous: f64, current: f64 },
}

impl fmt::Display for RowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowProblem::UnknownLabel(l) => write!(f, "unknown zone label `{l}`"),
            RowProblem::UnreadableFrame => f.write_str("frame cannot be read"),
            RowProblem::BadTimestamp(t) => write!(f, "timestamp {t} is negative or not finite"),
            RowProblem::TimestampDecreased { previous, current } => {
                write!(f, "timestamp {current} is earlier than the previous row ({previous})")
            }
        }
    }
}

/// A manifest row that failed validation, by zero-based row index.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub index: usize,
    pub frame_path: String,
    pub problem: RowProblem,
}

impl fmt::Display for RejectedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {} ({}): {}", self.index, self.frame_path, self.problem)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("drive `{drive_id}`: {} rejected row(s), first: {}", rejected.len(), rejected[0])]
    RejectedRows { drive_id: String, rejected: Vec<RejectedRow> },
    #[error("manifest is missing drive or subject id")]
    MissingManifestIdentity,
    #[error("sample `{frame_ref}` has an empty subject or drive id")]
    MissingIdentity { frame_ref: String },
    #[error("sample `{frame_ref}` has invalid timestamp {timestamp}")]
    BadTimestamp { frame_ref: String, timestamp: f64 },
    #[error("subject `{0}` is listed for both training and testing")]
    OverlappingSubjects(String),
    #[error("subject `{0}` is in neither the training nor the testing set")]
    UnassignedSubject(String),
    #[error("split fractions {0:?} must be positive and sum to 1")]
    BadFractions([f64; 3]),
    #[error("validation fraction {0} must lie in [0, 1)")]
    BadValidationFraction(f64),
    #[error("drive `{drive_id}` is too short to hold out validation frames {time_gap_s} s away from training frames")]
    InfeasibleGap { drive_id: String, time_gap_s: f64 },
    #[error("split invariant violated: {0}")]
    InvariantViolated(String),
}

/// Validates a manifest and turns each row into a sample, preserving order.
///
/// `frame_readable` is consulted for every row; rows it rejects are reported
/// together with label and timestamp problems.
pub fn ingest(
    manifest: &DriveManifest,
    mut frame_readable: impl FnMut(&str) -> bool,
) -> Result<Vec<LabeledSample>, DatasetError> {
    if manifest.drive_id.is_empty() || manifest.subject_id.is_empty() {
        return Err(DatasetError::MissingManifestIdentity);
    }
    let mut samples = Vec::with_capacity(manifest.rows.len());
    let mut rejected = Vec::new();
    let mut previous: Option<f64> = None;
    for (index, row) in manifest.rows.iter().enumerate() {
        let reject = |problem| RejectedRow { index, frame_path: row.frame_path.clone(), problem };
        if !(row.timestamp.is_finite() && row.timestamp >= 0.0) {
            rejected.push(reject(RowProblem::BadTimestamp(row.timestamp)));
            continue;
        }
        if let Some(prev) = previous {
            if row.timestamp < prev {
                rejected.push(reject(RowProblem::TimestampDecreased { previous: prev, current: row.timestamp }));
            }
        }
        previous = Some(row.timestamp);
        let zone = match row.zone_label.parse::<GazeZone>() {
            Ok(z) => z,
            Err(_) => {
                rejected.push(reject(RowProblem::UnknownLabel(row.zone_label.clone())));
                continue;
            }
        };
        if !frame_readable(&row.frame_path) {
            rejected.push(reject(RowProblem::UnreadableFrame));
            continue;
        }
        samples.push(LabeledSample {
            frame_ref: row.frame_path.clone(),
            subject_id: manifest.subject_id.clone(),
            drive_id: manifest.drive_id.clone(),
            timestamp: row.timestamp,
            zone,
        });
    }
    if rejected.is_empty() {
        Ok(samples)
    } else {
        Err(DatasetError::RejectedRows { drive_id: manifest.drive_id.clone(), rejected })
    }
}

/// A maximal run of frames fixating one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub drive_id: String,
    pub zone: GazeZone,
    pub samples: Vec<LabeledSample>,
}

impl Event {
    pub fn start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.timestamp)
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp)
    }
}

/// Groups time-ordered samples into events.
///
/// A new event starts on a zone change, a drive change, or when consecutive
/// timestamps are not strictly increasing or are further apart than
/// `gap_threshold_s`. Concatenating the events reproduces the input.
pub fn segment_events(samples: &[LabeledSample], gap_threshold_s: f64) -> Vec<Event> {
    let mut events: Vec<Event> = Vec::new();
    for s in samples {
        let extend = events.last().is_some_and(|e| {
            let last = e.samples.last().expect("events are never empty");
            let dt = s.timestamp - last.timestamp;
            e.zone == s.zone && e.drive_id == s.drive_id && dt > 0.0 && dt <= gap_threshold_s
        });
        if extend {
            events.last_mut().unwrap().samples.push(s.clone());
        } else {
            events.push(Event { drive_id: s.drive_id.clone(), zone: s.zone, samples: alloc::vec![s.clone()] });
        }
    }
    events
}

/// Per-zone sample counts in ordinal order.
pub fn zone_counts(samples: &[LabeledSample]) -> [usize; crate::zone::ZONE_COUNT] {
    let mut counts = [0; crate::zone::ZONE_COUNT];
    for s in samples {
        counts[s.zone.ordinal()] += 1;
    }
    counts
}
