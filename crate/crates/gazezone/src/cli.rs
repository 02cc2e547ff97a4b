//! Command line: `prepare`, `train`, `eval`, `cam` and `bench`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gazezone_core::dataset::TemporalFractions;
use gazezone_core::evaluation::{ConfigurationGrid, MAJORITY_THRESHOLD, MIN_BENCH_ITERATIONS};
use gazezone_core::models::Family;
use gazezone_core::preprocess::{Normalization, StrategyKind};

use crate::bench::{self, BenchReport};
use crate::eval::{self, Evaluator, Partition};
use crate::overlay::write_overlays;
use crate::prepare::{prepare, PrepareOptions, SplitArtifact, SplitSpec};
use crate::profile::load_profile;
use crate::report::{write_json, write_text};
use crate::run::{self, RunConfig, RunOutcome};

#[derive(Debug, Parser)]
#[command(name = "gazezone", version, about = "Driver gaze zone classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset split from drive manifests.
    Prepare(PrepareArgs),
    /// Fine-tune a pretrained backbone on a split.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Render class activation overlays for frames.
    Cam(CamArgs),
    /// Time inference of a checkpoint.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKindArg {
    CrossSubject,
    Temporal,
}

fn subjects(list: &[String]) -> BTreeSet<String> {
    list.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Drive manifest files.
    #[arg(long = "manifest", required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Camera profile the manifests must refer to.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cross-subject")]
    pub split: SplitKindArg,
    /// Training subjects, comma separated or repeated.
    #[arg(long = "train-subjects", num_args = 1..)]
    pub train_subjects: Vec<String>,
    #[arg(long = "test-subjects", num_args = 1..)]
    pub test_subjects: Vec<String>,
    /// Train, validation and test shares of each drive for a temporal split.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"])]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3500)]
    pub cap_per_zone: usize,
    #[arg(long, default_value_t = 1)]
    pub per_event_cap: usize,
    /// Also cap the test subjects' zones at this many frames.
    #[arg(long)]
    pub test_cap: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Minimum seconds between validation and training frames of a drive.
    #[arg(long)]
    pub time_gap: Option<f64>,
    /// Largest timestamp gap inside one fixation event, in seconds.
    #[arg(long)]
    pub gap_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split JSON to write; the counts table goes next to it.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Precomputed face detections (CSV).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// alexnet, vgg16, resnet50 or squeezenet.
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub weights_sha256: Option<String>,
    /// Shrinks every hidden width by this factor.
    #[arg(long)]
    pub width_divisor: Option<u32>,
    /// Keep the model at its native input size.
    #[arg(long)]
    pub fixed_resolution: bool,
    /// half-face, face, face-context or face-fov.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Per-channel means subtracted from RGB pixels.
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    pub channel_means: Option<Vec<f32>>,
    /// Multiplier applied after mean subtraction.
    #[arg(long)]
    pub pixel_scale: Option<f32>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Run directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    /// The file config with flags laid over it.
    pub fn run_config(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let normalization = match (&self.channel_means, self.pixel_scale) {
            (None, None) => None,
            (means, scale) => {
                let base = file.normalization.unwrap_or_default();
                Some(Normalization {
                    channel_means: means.as_deref().map(|m| [m[0], m[1], m[2]]).unwrap_or(base.channel_means),
                    scale: scale.unwrap_or(base.scale),
                })
            }
        };
        let flags = RunConfig {
            split: self.split.clone(),
            profile: self.profile.clone(),
            detections: self.detections.clone(),
            backbone: self.backbone.clone(),
            weights: self.weights.clone(),
            weights_sha256: self.weights_sha256.clone(),
            width_divisor: self.width_divisor,
            variable_resolution: self.fixed_resolution.then_some(false),
            strategy: self.strategy.clone(),
            resolution: self.resolution,
            normalization,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            output_dir: self.out.clone(),
            seed: self.seed,
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Confusion,
    Columbia,
    Grid,
    Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridChoice {
    /// Head poses -30, -5, 0, 5, 30 degrees.
    Standard,
    /// Head poses -30, -15, 0, 15, 30 degrees.
    ColumbiaRelease,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "confusion")]
    pub mode: EvalMode,
    /// Checkpoint file (all modes but grid).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: Partition,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Cross-dataset manifest (columbia mode).
    #[arg(long)]
    pub columbia: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "standard")]
    pub grid: GridChoice,
    #[arg(long, default_value_t = MAJORITY_THRESHOLD)]
    pub threshold: f64,
    /// Run directories or checkpoints (grid mode).
    #[arg(long = "runs", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub families: Vec<String>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub strategies: Vec<String>,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [224, 448, 625])]
    pub resolutions: Vec<u32>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Side of each overlay image in pixels.
    #[arg(long, default_value_t = 224)]
    pub size: u32,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Frames to explain.
    #[arg(required = true, num_args = 1..)]
    pub frames: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input size; the checkpoint's training size by default.
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// Also time decode, face lookup and cropping of a real frame.
    #[arg(long, requires_all = ["frame", "profile"])]
    pub end_to_end: bool,
    #[arg(long)]
    pub frame: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stats JSON to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<SplitArtifact> {
    if args.manifests.is_empty() {
        bail!("no manifests given");
    }
    let split = match args.split {
        SplitKindArg::CrossSubject => {
            let (train_subjects, test_subjects) = (subjects(&args.train_subjects), subjects(&args.test_subjects));
            if train_subjects.is_empty() || test_subjects.is_empty() {
                bail!("a cross-subject split needs --train-subjects and --test-subjects");
            }
            SplitSpec::CrossSubject { train_subjects, test_subjects }
        }
        SplitKindArg::Temporal => SplitSpec::Temporal {
            fractions: match args.fractions.as_deref() {
                Some(&[train, validation, test]) => TemporalFractions { train, validation, test },
                _ => TemporalFractions::default(),
            },
        },
    };
    let mut options = PrepareOptions::new(split, args.seed);
    options.balance.cap_per_zone = args.cap_per_zone;
    options.balance.per_event_cap = args.per_event_cap;
    options.test_cap_per_zone = args.test_cap;
    if let Some(v) = args.val_fraction {
        options.carve.fraction = v;
    }
    if let Some(v) = args.time_gap {
        options.carve.time_gap_s = v;
    }
    if let Some(v) = args.gap_threshold {
        options.gap_threshold_s = v;
    }
    let artifact = prepare(&args.manifests, &options)?;
    if let Some(p) = &args.profile {
        let profile = load_profile(p)?;
        let others: Vec<&String> = artifact.camera_profile_ids.iter().filter(|id| **id != profile.profile_id).collect();
        if !others.is_empty() {
            bail!("manifests refer to camera profiles {others:?}, not `{}`", profile.profile_id);
        }
    }
    artifact.save(&args.out)?;
    let table = artifact.counts_table();
    write_text(&args.out.with_extension("counts.txt"), &table)?;
    write_text(&args.out.with_extension("counts.csv"), &artifact.counts_csv())?;
    print!("{table}");
    log::info!("split written to {}", args.out.display());
    Ok(artifact)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunOutcome> {
    let run = args.run_config()?.resolve()?;
    let outcome = run::train(&run)?;
    println!("{}", outcome.report.train.summary());
    if let Some(t) = &outcome.report.test {
        println!("test macro {:.2}%, micro {:.2}%", t.macro_accuracy, t.micro_accuracy);
    }
    println!("run directory: {}", outcome.run_dir.display());
    Ok(outcome)
}

fn need<'a>(value: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| format!("--mode {mode} needs --{flag}"))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let detections = args.detections.as_deref();
    match args.mode {
        EvalMode::Confusion => {
            let evaluator = Evaluator::open(need(&args.checkpoint, "checkpoint", "confusion")?, &args.profile, detections)?;
            let artifact = SplitArtifact::load(need(&args.split, "split", "confusion")?)?;
            let summary = evaluator.confusion(eval::partition(&artifact, args.partition), &args.out)?;
            print!("{}", std::fs::read_to_string(args.out.join("confusion_percent.csv"))?);
            println!("macro {:.2}%, micro {:.2}%", summary.macro_accuracy, summary.micro_accuracy);
        }
        EvalMode::Columbia => {
            let evaluator = Evaluator::open(need(&args.checkpoint, "checkpoint", "columbia")?, &args.profile, detections)?;
            let grid = match args.grid {
                GridChoice::Standard => ConfigurationGrid::standard(),
                GridChoice::ColumbiaRelease => ConfigurationGrid::columbia_release(),
            };
            let hists = evaluator.columbia(need(&args.columbia, "columbia", "columbia")?, &grid, args.threshold, &args.out)?;
            let flagged = hists.iter().filter(|h| h.majority.is_some()).count();
            println!("{} configurations, {flagged} with a zone above {:.0}% of subjects", hists.len(), 100.0 * args.threshold);
        }
        EvalMode::Grid => {
            if args.runs.is_empty() {
                bail!("--mode grid needs --runs");
            }
            let families = if args.families.is_empty() {
                Family::ALL.to_vec()
            } else {
                args.families.iter().map(|f| f.parse::<Family>()).collect::<Result<_, _>>()?
            };
            let strategies = if args.strategies.is_empty() {
                StrategyKind::ALL.to_vec()
            } else {
                args.strategies
                    .iter()
                    .map(|s| StrategyKind::parse(s).with_context(|| format!("unknown crop strategy `{s}`")))
                    .collect::<Result<_>>()?
            };
            let artifact = SplitArtifact::load(need(&args.split, "split", "grid")?)?;
            let grid = eval::grid(&args.runs, &families, &strategies, &artifact, &args.profile, detections, &args.out)?;
            print!("{}", grid.to_table());
        }
        EvalMode::Resolution => {
            let evaluator = Evaluator::open(need(&args.checkpoint, "checkpoint", "resolution")?, &args.profile, detections)?;
            let artifact = SplitArtifact::load(need(&args.split, "split", "resolution")?)?;
            let rows = evaluator.resolutions(eval::partition(&artifact, args.partition), &args.resolutions, &args.out)?;
            print!("{}", crate::report::resolution_table(&rows));
        }
    }
    Ok(())
}

pub fn cmd_cam(args: &CamArgs) -> Result<()> {
    if args.frames.is_empty() {
        bail!("no frames given");
    }
    let evaluator = Evaluator::open(&args.checkpoint, &args.profile, args.detections.as_deref())?;
    let records = write_overlays(&evaluator, &args.frames, args.size, &args.out)?;
    println!("{} frame(s), {} overlays written to {}", records.len(), 7 * records.len(), args.out.display());
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.iters < MIN_BENCH_ITERATIONS {
        bail!("--iters must be at least {MIN_BENCH_ITERATIONS}, got {}", args.iters);
    }
    let (model, meta) = crate::checkpoint::load_checkpoint(&args.checkpoint)?;
    let resolution = args.resolution.unwrap_or(meta.resolution);
    let forward = bench::time_forward(&model, resolution, args.iters, args.warmup, args.seed)?;
    let end_to_end = if args.end_to_end {
        let frame = need(&args.frame, "frame", "end-to-end")?;
        let mut evaluator = Evaluator::open(&args.checkpoint, need(&args.profile, "profile", "end-to-end")?, args.detections.as_deref())?;
        evaluator.preprocessor.resolution = resolution;
        Some(bench::time_end_to_end(&evaluator, frame, args.iters, args.warmup)?)
    } else {
        None
    };
    let report = bench::report(&model, resolution, args.warmup, forward, end_to_end);
    for line in report.lines() {
        println!("{line}");
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Eval(a) => cmd_eval(a),
        Command::Cam(a) => cmd_cam(a),
        Command::Bench(a) => cmd_bench(a).map(drop),
    }
}
