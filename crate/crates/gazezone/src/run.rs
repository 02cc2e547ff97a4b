//! Training runs: configuration resolution, run directories and the
//! fine-tuning pipeline.
//!
//! A run directory holds
//!
//! ```text
//! config.json                 fully resolved settings; `train --config` replays them
//! epochs.csv                  one row per finished epoch
//! checkpoints/epoch-NNN.gzck  model after each epoch
//! model.gzck                  copy of the best epoch by validation macro accuracy
//! report.json                 training curve, best epoch and test accuracy
//! test/                       confusion reports on the test partition
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gazezone_core::dataset::LabeledSample;
use gazezone_core::evaluation::{evaluate, AccuracySummary};
use gazezone_core::models::{adapt_head, make_variable_resolution, BackboneSpec, Family, GazeModel, WeightsLocator};
use gazezone_core::preprocess::{CameraProfile, CropStrategy, Normalization, Preprocessor, StrategyKind};
use gazezone_core::training::{finetune_with_drops, select_best, EpochRecord, TrainConfig, TrainError, TrainHooks, TrainReport};
use serde::{Deserialize, Serialize};

use crate::cache::prepare_cached;
use crate::checkpoint::{config_fingerprint, load_backbone, save_checkpoint, zone_names, CheckpointMeta};
use crate::detector::{open_detector, PrecomputedDetector};
use crate::prepare::SplitArtifact;
use crate::profile::load_profile;
use crate::report::{write_confusion, write_json, write_text};

/// Run settings as read from a config file or flags; unset fields take
/// defaults when resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub split: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub backbone: Option<String>,
    /// Backbone weights file; stand-in weights seeded from `seed` otherwise.
    pub weights: Option<PathBuf>,
    pub weights_sha256: Option<String>,
    pub width_divisor: Option<u32>,
    pub variable_resolution: Option<bool>,
    pub strategy: Option<String>,
    pub resolution: Option<u32>,
    pub normalization: Option<Normalization>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<u32>,
    pub batch_size: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

macro_rules! overlay_fields {
    ($base:expr, $over:expr, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `over` wins wherever it sets a field.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        overlay_fields!(
            self, over, split, profile, detections, backbone, weights, weights_sha256, width_divisor,
            variable_resolution, strategy, resolution, normalization, learning_rate, epochs, batch_size,
            output_dir, seed
        )
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let family: Family = self.backbone.as_deref().unwrap_or("squeezenet").parse()?;
        let strategy = match self.strategy.as_deref() {
            None => StrategyKind::HalfFace,
            Some(s) => StrategyKind::parse(s).with_context(|| {
                let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown crop strategy `{s}`; expected one of: {}", names.join(", "))
            })?,
        };
        let seed = self.seed.unwrap_or(0);
        let weights = match &self.weights {
            Some(p) => WeightsLocator::File { path: p.to_string_lossy().into_owned(), sha256: self.weights_sha256.clone() },
            None => WeightsLocator::StandIn { seed },
        };
        let spec = BackboneSpec::new(family, weights).with_width_divisor(self.width_divisor.unwrap_or(1));
        let variable_resolution = self.variable_resolution.unwrap_or(family.head_kind() == gazezone_core::models::HeadKind::ConvGap);
        let mut train = TrainConfig::for_family(family);
        train.seed = seed;
        if let Some(v) = self.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        train.validate()?;
        let output_dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-seed{seed}", family.name(), strategy.name())));
        Ok(ResolvedRun {
            split: self.split.clone().context("no split given; pass --split or set `split` in the config file")?,
            profile: self.profile.clone().context("no camera profile given; pass --profile or set `profile`")?,
            detections: self.detections.clone(),
            spec,
            variable_resolution,
            strategy,
            resolution: self.resolution.unwrap_or(family.native_input()),
            normalization: self.normalization.unwrap_or_default(),
            train,
            output_dir,
            seed,
        })
    }
}

/// Settings of a run with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub split: PathBuf,
    pub profile: PathBuf,
    pub detections: Option<PathBuf>,
    pub spec: BackboneSpec,
    pub variable_resolution: bool,
    pub strategy: StrategyKind,
    pub resolution: u32,
    pub normalization: Normalization,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ResolvedRun {
    /// The config that resolves back to `self`, as persisted in the run directory.
    pub fn to_config(&self) -> RunConfig {
        let (weights, weights_sha256) = match &self.spec.weights {
            WeightsLocator::File { path, sha256 } => (Some(PathBuf::from(path)), sha256.clone()),
            WeightsLocator::StandIn { .. } => (None, None),
        };
        RunConfig {
            split: Some(self.split.clone()),
            profile: Some(self.profile.clone()),
            detections: self.detections.clone(),
            backbone: Some(self.spec.family.name().into()),
            weights,
            weights_sha256,
            width_divisor: Some(self.spec.width_divisor),
            variable_resolution: Some(self.variable_resolution),
            strategy: Some(self.strategy.name().into()),
            resolution: Some(self.resolution),
            normalization: Some(self.normalization),
            learning_rate: Some(self.train.learning_rate),
            epochs: Some(self.train.epochs),
            batch_size: Some(self.train.batch_size),
            output_dir: Some(self.output_dir.clone()),
            seed: Some(self.seed),
        }
    }

    pub fn preprocessor(&self, profile: CameraProfile) -> Preprocessor {
        Preprocessor {
            strategy: CropStrategy::from_kind(self.strategy, &profile),
            profile,
            resolution: self.resolution,
            normalization: self.normalization,
        }
    }

    pub fn checkpoint_meta(&self, epoch: Option<u32>) -> CheckpointMeta {
        CheckpointMeta {
            spec: self.spec.clone(),
            variable_resolution: self.variable_resolution,
            resolution: self.resolution,
            strategy: self.strategy.name().into(),
            normalization: self.normalization,
            zones: zone_names(),
            epoch,
            train_config_fingerprint: Some(config_fingerprint(&self.train)),
            train_config: Some(self.train.clone()),
        }
    }
}

/// Pretrained backbone with a fresh 7-way head, converted for variable input
/// sizes when configured.
pub fn build_model(spec: &BackboneSpec, variable_resolution: bool, seed: u64) -> Result<GazeModel> {
    let backbone = load_backbone(spec)?;
    let model = adapt_head(backbone, seed.wrapping_add(1))?;
    Ok(if variable_resolution { make_variable_resolution(model)? } else { model })
}

pub fn checkpoint_path(run_dir: &Path, epoch: u32) -> PathBuf {
    run_dir.join("checkpoints").join(format!("epoch-{epoch:03}.gzck"))
}

const EPOCHS_HEADER: &str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy,val_macro_accuracy,wall_ms,checkpoint\n";

struct RunHooks<'a> {
    run: &'a ResolvedRun,
    start: Instant,
    epochs_csv: String,
}

impl TrainHooks for RunHooks<'_> {
    fn now_ms(&mut self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64() * 1e3)
    }

    fn on_epoch(&mut self, model: &GazeModel, r: &EpochRecord) -> Result<Option<String>, String> {
        let path = checkpoint_path(&self.run.output_dir, r.epoch);
        save_checkpoint(&path, model, &self.run.checkpoint_meta(Some(r.epoch))).map_err(|e| e.to_string())?;
        let _ = writeln!(
            self.epochs_csv,
            "{},{:.6},{:.4},{:.6},{:.4},{:.4},{},{}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_loss,
            r.val_accuracy,
            r.val_macro_accuracy,
            r.wall_ms.map(|v| format!("{v:.0}")).unwrap_or_default(),
            path.display()
        );
        write_text(&self.run.output_dir.join("epochs.csv"), &self.epochs_csv).map_err(|e| format!("{e:#}"))?;
        log::info!(
            "epoch {} train_loss={:.4} val_loss={:.4} val_macro={:.2}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_macro_accuracy
        );
        Ok(Some(path.to_string_lossy().into_owned()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub backbone: String,
    pub strategy: String,
    pub resolution: u32,
    pub best_epoch: Option<u32>,
    pub best_checkpoint: Option<PathBuf>,
    pub train: TrainReport,
    pub test: Option<AccuracySummary>,
    pub test_dropped_no_face: usize,
}

/// Outcome of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub model: GazeModel,
    pub report: RunReport,
}

fn prepare_set(
    name: &str,
    samples: &[LabeledSample],
    pre: &Preprocessor,
    det: &PrecomputedDetector,
) -> Result<gazezone_core::training::Prepared> {
    let prepared = prepare_cached(samples, pre, det, det.digest()).with_context(|| format!("preparing {name} frames"))?;
    if !prepared.no_face.is_empty() {
        log::warn!("{name}: {} frame(s) without a detected face were dropped", prepared.no_face.len());
    }
    Ok(prepared)
}

/// Fine-tunes a model per `run`, writing the run directory as it goes.
pub fn train(run: &ResolvedRun) -> Result<RunOutcome> {
    let dir = &run.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    write_json(&dir.join("config.json"), &run.to_config())?;
    log::info!("run directory {}", dir.display());

    let artifact = SplitArtifact::load(&run.split)?;
    let profile = load_profile(&run.profile)?;
    if !artifact.camera_profile_ids.is_empty() && !artifact.camera_profile_ids.contains(&profile.profile_id) {
        log::warn!(
            "camera profile `{}` is not among the split's profiles {:?}",
            profile.profile_id,
            artifact.camera_profile_ids
        );
    }
    let detector = open_detector(run.detections.as_deref(), run.strategy)?;
    let pre = run.preprocessor(profile);
    let train_set = prepare_set("train", &artifact.split.train, &pre, &detector)?;
    let val_set = prepare_set("validation", &artifact.split.validation, &pre, &detector)?;

    let mut model = build_model(&run.spec, run.variable_resolution, run.seed)?;
    log::info!(
        "fine-tuning {} ({} parameters) on {} frames, validating on {}",
        run.spec,
        model.param_count(),
        train_set.examples.len(),
        val_set.examples.len()
    );
    let mut hooks = RunHooks { run, start: Instant::now(), epochs_csv: EPOCHS_HEADER.to_string() };
    let dropped = train_set.no_face.len() + val_set.no_face.len();
    let report = match finetune_with_drops(&mut model, &train_set.examples, &val_set.examples, dropped, &run.train, &mut hooks) {
        Ok(r) => r,
        Err(TrainError::Diverged { epoch, last_good, report }) => {
            write_json(&dir.join("report.json"), &report)?;
            bail!("training diverged in epoch {epoch}; last good checkpoint: {last_good:?}");
        }
        Err(e) => return Err(e.into()),
    };

    let best = select_best(&report).cloned();
    let mut best_checkpoint = None;
    if let Some(b) = &best {
        let src = checkpoint_path(dir, b.epoch);
        let dst = dir.join("model.gzck");
        std::fs::copy(&src, &dst).with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
        let (best_model, _) = crate::checkpoint::load_checkpoint(&dst)?;
        model = best_model;
        best_checkpoint = Some(dst);
        log::info!("best epoch {} (validation macro {:.2})", b.epoch, b.val_macro_accuracy);
    }

    let (test, test_dropped_no_face) = if artifact.split.test.is_empty() {
        (None, 0)
    } else {
        let test_set = prepare_set("test", &artifact.split.test, &pre, &detector)?;
        let cm = evaluate(&model, &test_set.examples)?;
        let summary = write_confusion(&dir.join("test"), &cm)?;
        log::info!("test macro={:.2} micro={:.2}", summary.macro_accuracy, summary.micro_accuracy);
        (Some(summary), test_set.no_face.len())
    };
    let run_report = RunReport {
        backbone: run.spec.family.name().into(),
        strategy: run.strategy.name().into(),
        resolution: run.resolution,
        best_epoch: best.map(|b| b.epoch),
        best_checkpoint,
        train: report,
        test,
        test_dropped_no_face,
    };
    write_json(&dir.join("report.json"), &run_report)?;
    Ok(RunOutcome { run_dir: dir.clone(), model, report: run_report })
}
