//! Manifests to split artifact: ingest, segment, balance, split, carve.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazezone_core::dataset::{
    balance, ingest, segment_events, split_cross_subject, split_temporal, zone_counts, BalanceConfig,
    CarveConfig, DatasetSplit, Event, LabeledSample, TemporalFractions, DEFAULT_GAP_THRESHOLD_S,
};
use gazezone_core::zone::{GazeZone, ZONE_COUNT};
use serde::{Deserialize, Serialize};

use crate::frames::is_readable_image;
use crate::manifest::read_drive_manifest;

pub const SPLIT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitSpec {
    CrossSubject { train_subjects: BTreeSet<String>, test_subjects: BTreeSet<String> },
    Temporal { fractions: TemporalFractions },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub gap_threshold_s: f64,
    /// Applied to the training subjects (cross-subject) or to every drive
    /// before splitting (temporal).
    pub balance: BalanceConfig,
    /// Optional cap for the held-out test subjects of a cross-subject split.
    pub test_cap_per_zone: Option<usize>,
    pub carve: CarveConfig,
    pub split: SplitSpec,
}

impl PrepareOptions {
    pub fn new(split: SplitSpec, seed: u64) -> Self {
        Self {
            gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
            balance: BalanceConfig { seed, ..BalanceConfig::default() },
            test_cap_per_zone: None,
            carve: CarveConfig::default(),
            split,
        }
    }
}

/// Per-zone frame counts at each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneCountRow {
    pub zone: GazeZone,
    pub annotated: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Everything needed to reproduce and use a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub format_version: u32,
    pub manifests: Vec<PathBuf>,
    pub camera_profile_ids: BTreeSet<String>,
    pub options: PrepareOptions,
    pub counts: Vec<ZoneCountRow>,
    /// Training frames given up to keep validation away from training in time.
    pub discarded_for_gap: usize,
    pub warnings: Vec<String>,
    pub split: DatasetSplit,
}

impl SplitArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
        let artifact: Self = serde_json::from_str(&text).with_context(|| format!("parsing split {}", path.display()))?;
        if artifact.format_version != SPLIT_FORMAT_VERSION {
            bail!("{}: split format version {} is not supported", path.display(), artifact.format_version);
        }
        artifact.split.check_invariants().with_context(|| format!("split {}", path.display()))?;
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    /// Plain-text per-zone count table.
    pub fn counts_table(&self) -> String {
        let mut out = format!("{:<16}{:>10}{:>10}{:>12}{:>10}\n", "zone", "annotated", "train", "validation", "test");
        let mut totals = [0usize; 4];
        for r in &self.counts {
            out.push_str(&format!("{:<16}{:>10}{:>10}{:>12}{:>10}\n", r.zone.name(), r.annotated, r.train, r.validation, r.test));
            for (t, v) in totals.iter_mut().zip([r.annotated, r.train, r.validation, r.test]) {
                *t += v;
            }
        }
        out.push_str(&format!("{:<16}{:>10}{:>10}{:>12}{:>10}\n", "total", totals[0], totals[1], totals[2], totals[3]));
        out
    }

    pub fn counts_csv(&self) -> String {
        let mut out = String::from("zone,annotated,train,validation,test\n");
        for r in &self.counts {
            out.push_str(&format!("{},{},{},{},{}\n", r.zone.name(), r.annotated, r.train, r.validation, r.test));
        }
        out
    }
}

fn events_by_drive(samples: &[LabeledSample], gap: f64) -> Vec<Event> {
    let mut drives: Vec<&str> = samples.iter().map(|s| s.drive_id.as_str()).collect();
    drives.sort_unstable();
    drives.dedup();
    let mut events = Vec::new();
    for d in drives {
        let drive: Vec<LabeledSample> = samples.iter().filter(|s| s.drive_id == d).cloned().collect();
        events.extend(segment_events(&drive, gap));
    }
    events
}

fn balanced(samples: &[LabeledSample], gap: f64, config: &BalanceConfig) -> Vec<LabeledSample> {
    balance(&events_by_drive(samples, gap), config)
}

/// Reads and validates every manifest; rejected rows carry file and row context.
pub fn ingest_manifests(paths: &[PathBuf]) -> Result<(Vec<LabeledSample>, BTreeSet<String>)> {
    if paths.is_empty() {
        bail!("no manifests given");
    }
    let mut samples = Vec::new();
    let mut profiles = BTreeSet::new();
    for path in paths {
        let manifest = read_drive_manifest(path)?;
        profiles.insert(manifest.camera_profile_id.clone());
        let rows = ingest(&manifest, |frame| is_readable_image(Path::new(frame)))
            .with_context(|| format!("manifest {}", path.display()))?;
        log::info!("ingested {} frames from {}", rows.len(), path.display());
        samples.extend(rows);
    }
    Ok((samples, profiles))
}

/// Builds a split from already ingested samples.
pub fn build_split(samples: &[LabeledSample], options: &PrepareOptions) -> Result<(DatasetSplit, usize, Vec<String>)> {
    let gap = options.gap_threshold_s;
    match &options.split {
        SplitSpec::CrossSubject { train_subjects, test_subjects } => {
            let fit: Vec<LabeledSample> = samples.iter().filter(|s| train_subjects.contains(&s.subject_id)).cloned().collect();
            let test: Vec<LabeledSample> = samples.iter().filter(|s| test_subjects.contains(&s.subject_id)).cloned().collect();
            let mut pool = balanced(&fit, gap, &options.balance);
            pool.extend(match options.test_cap_per_zone {
                Some(cap) => balanced(&test, gap, &BalanceConfig { cap_per_zone: cap, ..options.balance }),
                None => test,
            });
            // Samples of subjects in neither set make the core split fail loudly.
            pool.extend(
                samples
                    .iter()
                    .filter(|s| !train_subjects.contains(&s.subject_id) && !test_subjects.contains(&s.subject_id))
                    .cloned(),
            );
            let outcome = split_cross_subject(&pool, train_subjects, test_subjects, &options.carve)?;
            Ok((outcome.split, outcome.discarded.len(), outcome.warnings))
        }
        SplitSpec::Temporal { fractions } => {
            let pool = balanced(samples, gap, &options.balance);
            let split = split_temporal(&pool, fractions)?;
            Ok((split, 0, Vec::new()))
        }
    }
}

pub fn prepare(manifests: &[PathBuf], options: &PrepareOptions) -> Result<SplitArtifact> {
    let (samples, camera_profile_ids) = ingest_manifests(manifests)?;
    let (split, discarded_for_gap, warnings) = build_split(&samples, options)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let annotated = zone_counts(&samples);
    let [train, validation, test] = [&split.train, &split.validation, &split.test].map(|p| zone_counts(p));
    let counts = (0..ZONE_COUNT)
        .map(|i| ZoneCountRow {
            zone: GazeZone::ALL[i],
            annotated: annotated[i],
            train: train[i],
            validation: validation[i],
            test: test[i],
        })
        .collect();
    Ok(SplitArtifact {
        format_version: SPLIT_FORMAT_VERSION,
        manifests: manifests.to_vec(),
        camera_profile_ids,
        options: options.clone(),
        counts,
        discarded_for_gap,
        warnings,
        split,
    })
}
