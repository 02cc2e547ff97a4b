//! Evaluation protocols: frozen-model evaluation, the backbone x crop
//! ablation grid, the resolution study, timing statistics and the
//! cross-dataset pose/gaze histogram protocol.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{macro_accuracy, micro_accuracy, normalized_entropy, ConfusionMatrix, MetricError};
use crate::models::{Family, GazeModel, ModelError};
use crate::preprocess::StrategyKind;
use crate::reference;
use crate::training::{evaluate_examples, Example};
use crate::zone::{GazeZone, ZONE_COUNT};

/// Accuracy summary of one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub macro_accuracy: f64,
    pub micro_accuracy: f64,
    /// Recall per zone, in zone order; `None` when the zone has no samples.
    pub per_zone: Vec<(GazeZone, Option<f64>)>,
    pub total: u64,
}

impl AccuracySummary {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self, MetricError> {
        Ok(Self {
            macro_accuracy: macro_accuracy(cm)?,
            micro_accuracy: micro_accuracy(cm)?,
            per_zone: GazeZone::ALL.into_iter().zip(cm.class_accuracies()).collect(),
            total: cm.total(),
        })
    }
}

/// Confusion matrix of a frozen model over prepared examples.
pub fn evaluate(model: &GazeModel, examples: &[Example]) -> Result<ConfusionMatrix, ModelError> {
    Ok(evaluate_examples(model, examples)?.1)
}

/// Outcome of one cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellOutcome {
    Done { macro_accuracy: f64, run_dir: Option<String> },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub family: Family,
    pub strategy: StrategyKind,
    pub outcome: CellOutcome,
    /// Reported value for the same cell, for annotation only.
    pub reference: Option<f64>,
}

/// Macro accuracy per backbone (rows) and crop strategy (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub families: Vec<Family>,
    pub strategies: Vec<StrategyKind>,
    /// Row-major, `families.len() * strategies.len()` cells.
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, family: Family, strategy: StrategyKind) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.family == family && c.strategy == strategy)
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c.outcome, CellOutcome::Failed { .. })).count()
    }

    /// Plain-text table with two-decimal cells and `failed` for failed runs.
    pub fn to_table(&self) -> String {
        use core::fmt::Write;
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "backbone");
        for s in &self.strategies {
            let _ = write!(out, " {:>13}", s.name());
        }
        out.push('\n');
        for (r, f) in self.families.iter().enumerate() {
            let _ = write!(out, "{:<12}", f.display_name());
            for c in &self.cells[r * self.strategies.len()..(r + 1) * self.strategies.len()] {
                match &c.outcome {
                    CellOutcome::Done { macro_accuracy, .. } => {
                        let _ = write!(out, " {:>13.2}", crate::metrics::round2(*macro_accuracy));
                    }
                    CellOutcome::Failed { .. } => {
                        let _ = write!(out, " {:>13}", "failed");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `run` for every backbone and strategy. A failing cell is recorded
/// and the grid carries on.
pub fn ablation_grid(
    families: &[Family],
    strategies: &[StrategyKind],
    mut run: impl FnMut(Family, StrategyKind) -> Result<(f64, Option<String>), String>,
) -> AblationGrid {
    let mut cells = Vec::with_capacity(families.len() * strategies.len());
    for &family in families {
        for &strategy in strategies {
            let outcome = match run(family, strategy) {
                Ok((macro_accuracy, run_dir)) => CellOutcome::Done { macro_accuracy, run_dir },
                Err(reason) => CellOutcome::Failed { reason },
            };
            cells.push(AblationCell { family, strategy, outcome, reference: reference::ablation_reference(family, strategy) });
        }
    }
    AblationGrid { families: families.to_vec(), strategies: strategies.to_vec(), cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub resolution: u32,
    pub macro_accuracy: f64,
    pub micro_accuracy: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Error)]
pub enum StudyError<E> {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("preparing {resolution}x{resolution} inputs: {source}")]
    Prepare { resolution: u32, source: E },
    #[error("{resolution}x{resolution}: {source}")]
    Metric { resolution: u32, source: MetricError },
}

/// Macro accuracy of a variable-resolution model at each input size.
/// `examples_at` prepares the evaluation set at a given resolution.
pub fn resolution_study<E>(
    model: &GazeModel,
    resolutions: &[u32],
    mut examples_at: impl FnMut(u32) -> Result<Vec<Example>, E>,
) -> Result<Vec<ResolutionRow>, StudyError<E>> {
    if !model.accepts_variable_resolution() {
        return Err(ModelError::FixedResolution { family: model.spec().family }.into());
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &resolution in resolutions {
        let examples = examples_at(resolution).map_err(|source| StudyError::Prepare { resolution, source })?;
        let cm = evaluate(model, &examples)?;
        let metric = |source| StudyError::Metric { resolution, source };
        rows.push(ResolutionRow {
            resolution,
            macro_accuracy: cm.macro_over_present().ok_or(MetricError::Empty).map_err(metric)?,
            micro_accuracy: micro_accuracy(&cm).map_err(metric)?,
            reference: reference::resolution_reference(resolution),
        });
    }
    Ok(rows)
}

/// Fewest timed iterations a benchmark accepts.
pub const MIN_BENCH_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("at least {MIN_BENCH_ITERATIONS} timed iterations are needed, got {0}")]
pub struct TooFewIterations(pub usize);

/// Wall-clock statistics of repeated single-image runs, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles of `samples_ms`.
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self, TooFewIterations> {
        if samples_ms.len() < MIN_BENCH_ITERATIONS {
            return Err(TooFewIterations(samples_ms.len()));
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |q: f64| sorted[(libm::ceil(q * n as f64) as usize).clamp(1, n) - 1];
        Ok(Self {
            iterations: n,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
        })
    }
}

/// Times `iterations` calls of `run` after `warmup` untimed ones, reading
/// milliseconds from `clock_ms`.
pub fn benchmark(
    iterations: usize,
    warmup: usize,
    mut clock_ms: impl FnMut() -> f64,
    mut run: impl FnMut(),
) -> Result<(TimingStats, Vec<f64>), TooFewIterations> {
    if iterations < MIN_BENCH_ITERATIONS {
        return Err(TooFewIterations(iterations));
    }
    for _ in 0..warmup {
        run();
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = clock_ms();
        run();
        samples.push(clock_ms() - t0);
    }
    Ok((TimingStats::from_samples(&samples)?, samples))
}

/// One head-pose / gaze-direction combination of the cross-dataset protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseGazeConfiguration {
    pub head_pose_deg: i32,
    pub h_gaze_deg: i32,
    pub v_gaze_deg: i32,
}

/// Allowed angles of each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigurationGrid {
    pub head_poses: Vec<i32>,
    pub h_gazes: Vec<i32>,
    pub v_gazes: Vec<i32>,
}

impl ConfigurationGrid {
    /// Head poses {0, ±5, ±30}, horizontal gaze {0, ±5, ±10, ±15} and
    /// vertical gaze {0, ±10}: 105 configurations.
    pub fn standard() -> Self {
        Self {
            head_poses: alloc::vec![-30, -5, 0, 5, 30],
            h_gazes: alloc::vec![-15, -10, -5, 0, 5, 10, 15],
            v_gazes: alloc::vec![-10, 0, 10],
        }
    }

    /// Same gaze angles with head poses {0, ±15, ±30}, as in the public
    /// release of the Columbia Gaze data set.
    pub fn columbia_release() -> Self {
        Self { head_poses: alloc::vec![-30, -15, 0, 15, 30], ..Self::standard() }
    }

    pub fn configurations(&self) -> Vec<PoseGazeConfiguration> {
        let mut out = Vec::with_capacity(self.len());
        for &head_pose_deg in &self.head_poses {
            for &h_gaze_deg in &self.h_gazes {
                for &v_gaze_deg in &self.v_gazes {
                    out.push(PoseGazeConfiguration { head_pose_deg, h_gaze_deg, v_gaze_deg });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.head_poses.len() * self.h_gazes.len() * self.v_gazes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: &PoseGazeConfiguration) -> bool {
        self.head_poses.contains(&c.head_pose_deg)
            && self.h_gazes.contains(&c.h_gaze_deg)
            && self.v_gazes.contains(&c.v_gaze_deg)
    }
}

/// One image row of a cross-dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumbiaRow {
    pub subject_id: String,
    pub configuration: PoseGazeConfiguration,
    pub image_path: String,
}

/// Default share of subjects a single zone must exceed to flag a configuration.
pub const MAJORITY_THRESHOLD: f64 = 0.70;

/// Predicted-zone histogram over the subjects of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationHistogram {
    pub configuration: PoseGazeConfiguration,
    pub counts: [u32; ZONE_COUNT],
    /// Share of classified subjects per zone; all zero when none were classified.
    pub fractions: [f64; ZONE_COUNT],
    /// Normalized entropy of `fractions` over 7 zones.
    pub entropy: f64,
    pub classified: u32,
    pub expected_subjects: u32,
    /// Subjects whose image was missing or unusable.
    pub missing: Vec<String>,
    /// Zone whose share exceeds the majority threshold, if any.
    pub majority: Option<GazeZone>,
}

impl ConfigurationHistogram {
    pub fn from_counts(
        configuration: PoseGazeConfiguration,
        counts: [u32; ZONE_COUNT],
        expected_subjects: u32,
        missing: Vec<String>,
        threshold: f64,
    ) -> Self {
        let classified: u32 = counts.iter().sum();
        let mut fractions = [0.0; ZONE_COUNT];
        if classified > 0 {
            for (f, &c) in fractions.iter_mut().zip(&counts) {
                *f = c as f64 / classified as f64;
            }
        }
        let entropy = if classified > 0 { normalized_entropy(&fractions, ZONE_COUNT).expect("7 >= 2") } else { 0.0 };
        let majority = GazeZone::ALL.into_iter().find(|z| fractions[z.ordinal()] > threshold);
        Self { configuration, counts, fractions, entropy, classified, expected_subjects, missing, majority }
    }

    /// Classified subjects over expected subjects.
    pub fn coverage(&self) -> f64 {
        if self.expected_subjects == 0 {
            0.0
        } else {
            self.classified as f64 / self.expected_subjects as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum CrossDatasetError<E> {
    #[error("subject {subject}: configuration {configuration:?} is not part of the grid")]
    OffGrid { subject: String, configuration: PoseGazeConfiguration },
    #[error("subject {subject} has more than one image for configuration {configuration:?}")]
    Duplicate { subject: String, configuration: PoseGazeConfiguration },
    #[error("classifying {image_path}: {source}")]
    Classify { image_path: String, source: E },
}

/// Classifies every manifest row and histograms the predictions per
/// configuration, in grid order.
///
/// `classify` returns `Ok(None)` for an image that is missing or where no
/// face was found; such subjects are listed per configuration and the
/// histogram covers the remaining ones. Subjects absent from the manifest
/// for a configuration are listed as missing too.
pub fn cross_dataset_eval<E>(
    rows: &[ColumbiaRow],
    grid: &ConfigurationGrid,
    threshold: f64,
    mut classify: impl FnMut(&ColumbiaRow) -> Result<Option<GazeZone>, E>,
) -> Result<Vec<ConfigurationHistogram>, CrossDatasetError<E>> {
    let subjects: alloc::collections::BTreeSet<&str> = rows.iter().map(|r| r.subject_id.as_str()).collect();
    let mut per_config: BTreeMap<PoseGazeConfiguration, BTreeMap<&str, Option<GazeZone>>> = BTreeMap::new();
    for row in rows {
        if !grid.contains(&row.configuration) {
            return Err(CrossDatasetError::OffGrid { subject: row.subject_id.clone(), configuration: row.configuration });
        }
        let entry = per_config.entry(row.configuration).or_default();
        if entry.contains_key(row.subject_id.as_str()) {
            return Err(CrossDatasetError::Duplicate { subject: row.subject_id.clone(), configuration: row.configuration });
        }
        let zone = classify(row).map_err(|source| CrossDatasetError::Classify { image_path: row.image_path.clone(), source })?;
        entry.insert(row.subject_id.as_str(), zone);
    }
    let empty = BTreeMap::new();
    Ok(grid
        .configurations()
        .into_iter()
        .map(|configuration| {
            let results = per_config.get(&configuration).unwrap_or(&empty);
            let mut counts = [0u32; ZONE_COUNT];
            let mut missing = Vec::new();
            for &subject in &subjects {
                match results.get(subject) {
                    Some(Some(zone)) => counts[zone.ordinal()] += 1,
                    _ => missing.push(String::from(subject)),
                }
            }
            ConfigurationHistogram::from_counts(configuration, counts, subjects.len() as u32, missing, threshold)
        })
        .collect())
}
