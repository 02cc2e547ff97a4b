//! Evaluation of frozen checkpoints: confusion, cross-dataset histograms,
//! backbone/strategy grids and resolution sweeps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazezone_core::dataset::LabeledSample;
use gazezone_core::evaluation::{
    ablation_grid, cross_dataset_eval, evaluate, resolution_study, AblationGrid, AccuracySummary, ConfigurationGrid,
    ConfigurationHistogram, ResolutionRow,
};
use gazezone_core::models::{Family, GazeModel};
use gazezone_core::preprocess::{CropStrategy, PreprocessError, Preprocessor, StrategyKind};
use gazezone_core::zone::argmax_zone;

use crate::cache::prepare_cached;
use crate::checkpoint::{load_checkpoint, CheckpointMeta};
use crate::detector::{open_detector, PrecomputedDetector};
use crate::frames::load_rgb;
use crate::manifest::read_columbia_manifest;
use crate::prepare::SplitArtifact;
use crate::profile::load_profile;
use crate::report::{write_confusion, write_grid, write_histograms, write_resolution};

/// A checkpoint with everything needed to feed it frames.
pub struct Evaluator {
    pub model: GazeModel,
    pub meta: CheckpointMeta,
    pub preprocessor: Preprocessor,
    pub detector: PrecomputedDetector,
}

impl Evaluator {
    pub fn open(checkpoint: &Path, profile: &Path, detections: Option<&Path>) -> Result<Self> {
        let (model, meta) = load_checkpoint(checkpoint)?;
        let strategy = StrategyKind::parse(&meta.strategy)
            .with_context(|| format!("{}: unknown crop strategy `{}`", checkpoint.display(), meta.strategy))?;
        let profile = load_profile(profile)?;
        let detector = open_detector(detections, strategy)?;
        let preprocessor = Preprocessor {
            strategy: CropStrategy::from_kind(strategy, &profile),
            profile,
            resolution: meta.resolution,
            normalization: meta.normalization,
        };
        Ok(Self { model, meta, preprocessor, detector })
    }

    pub fn strategy(&self) -> StrategyKind {
        self.preprocessor.strategy.kind()
    }

    fn prepare(&self, samples: &[LabeledSample], pre: &Preprocessor) -> Result<Vec<gazezone_core::training::Example>> {
        let prepared = prepare_cached(samples, pre, &self.detector, self.detector.digest())?;
        if !prepared.no_face.is_empty() {
            log::warn!("{} frame(s) without a detected face were skipped", prepared.no_face.len());
        }
        Ok(prepared.examples)
    }

    /// Confusion reports over `samples`, written into `out`.
    pub fn confusion(&self, samples: &[LabeledSample], out: &Path) -> Result<AccuracySummary> {
        if samples.is_empty() {
            bail!("the selected partition is empty");
        }
        let examples = self.prepare(samples, &self.preprocessor)?;
        let cm = evaluate(&self.model, &examples)?;
        write_confusion(out, &cm)
    }

    pub fn resolutions(&self, samples: &[LabeledSample], resolutions: &[u32], out: &Path) -> Result<Vec<ResolutionRow>> {
        let rows = resolution_study(&self.model, resolutions, |resolution| {
            let pre = Preprocessor { resolution, ..self.preprocessor.clone() };
            self.prepare(samples, &pre)
        })
        .map_err(|e| anyhow::anyhow!("{e:#}"))?;
        write_resolution(out, &rows)?;
        Ok(rows)
    }

    /// Zone predicted for one image, or `None` when the image is missing or
    /// no face is found in it.
    pub fn classify_file(&self, path: &Path) -> Result<Option<gazezone_core::zone::GazeZone>> {
        if !path.exists() {
            log::warn!("missing image {}", path.display());
            return Ok(None);
        }
        let frame = load_rgb(path)?;
        let key = path.to_string_lossy();
        match self.preprocessor.prepare(&key, &frame, &self.detector) {
            Ok(input) => Ok(Some(argmax_zone(&self.model.forward(&input.pixels)?.distribution))),
            Err(PreprocessError::NoFace(_)) => {
                log::warn!("no face found in {}", path.display());
                Ok(None)
            }
            Err(e) => Err(e).with_context(|| format!("preprocessing {}", path.display())),
        }
    }

    pub fn columbia(&self, manifest: &Path, grid: &ConfigurationGrid, threshold: f64, out: &Path) -> Result<Vec<ConfigurationHistogram>> {
        let rows = read_columbia_manifest(manifest)?;
        if rows.is_empty() {
            bail!("{}: no images listed", manifest.display());
        }
        let hists = cross_dataset_eval(&rows, grid, threshold, |row| self.classify_file(Path::new(&row.image_path)))
            .map_err(|e| anyhow::anyhow!("{e:#}"))?;
        write_histograms(out, &hists)?;
        Ok(hists)
    }
}

/// Which partition of a split to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

pub fn partition(artifact: &SplitArtifact, which: Partition) -> &[LabeledSample] {
    match which {
        Partition::Train => &artifact.split.train,
        Partition::Validation => &artifact.split.validation,
        Partition::Test => &artifact.split.test,
    }
}

/// The checkpoint a grid entry names: a file, or a run directory's `model.gzck`.
pub fn checkpoint_in(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.gzck")
    } else {
        path.to_path_buf()
    }
}

/// Evaluates the checkpoint trained for each backbone and strategy on the
/// test partition. Cells without a checkpoint, or whose evaluation fails,
/// are marked failed.
pub fn grid(
    runs: &[PathBuf],
    families: &[Family],
    strategies: &[StrategyKind],
    artifact: &SplitArtifact,
    profile: &Path,
    detections: Option<&Path>,
    out: &Path,
) -> Result<AblationGrid> {
    let mut available = Vec::new();
    for r in runs {
        let ckpt = checkpoint_in(r);
        match crate::checkpoint::load_checkpoint(&ckpt) {
            Ok((_, meta)) => available.push((ckpt, meta.spec.family, meta.strategy)),
            Err(e) => log::warn!("skipping {}: {e}", ckpt.display()),
        }
    }
    let grid = ablation_grid(families, strategies, |family, strategy| {
        let (ckpt, ..) = available
            .iter()
            .find(|(_, f, s)| *f == family && s == strategy.name())
            .ok_or_else(|| format!("no checkpoint for {} with {strategy}", family.name()))?;
        let run = || -> Result<f64> {
            let evaluator = Evaluator::open(ckpt, profile, detections)?;
            let cell_dir = out.join(format!("{}-{}", family.name(), strategy.name()));
            Ok(evaluator.confusion(&artifact.split.test, &cell_dir)?.macro_accuracy)
        };
        match run() {
            Ok(m) => Ok((m, Some(ckpt.to_string_lossy().into_owned()))),
            Err(e) => {
                log::warn!("grid cell {} / {strategy} failed: {e:#}", family.name());
                Err(format!("{e:#}"))
            }
        }
    });
    write_grid(out, &grid)?;
    Ok(grid)
}
