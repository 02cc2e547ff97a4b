//! Fine-tuning loop: cross-entropy, Adam, per-epoch validation.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledSample;
use crate::image::RgbImage;
use crate::metrics::ConfusionMatrix;
use crate::models::{Family, GazeModel, ModelError};
use crate::nn::{Layer, Pass, Tensor};
use crate::preprocess::{FaceDetector, PreprocessError, Preprocessor};
use crate::zone::{argmax_zone, GazeZone, ZoneDistribution, ZONE_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("epochs must be at least 1")]
    Epochs,
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("Adam moment decay rates must lie in [0, 1), got {0} and {1}")]
    Betas(f64, f64),
}

impl TrainConfig {
    pub fn for_family(family: Family) -> Self {
        let (learning_rate, batch_size) = match family {
            Family::SqueezeNet => (4e-4, 64),
            Family::AlexNet => (1e-4, 64),
            Family::Vgg16 => (1e-4, 32),
            Family::ResNet50 => (1e-4, 16),
        };
        Self { learning_rate, epochs: 50, batch_size, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::LearningRate(self.learning_rate));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Epochs);
        }
        if self.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(ConfigError::Betas(self.beta1, self.beta2));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies accumulated gradients divided by `batch_len`, then clears them.
    pub fn step(&mut self, model: &mut GazeModel, batch_len: usize) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let lr = (self.lr * libm::sqrt(c2) / c1) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, (self.epsilon * libm::sqrt(c2)) as f32);
        let scale = 1.0 / batch_len as f32;
        let moments = &mut self.moments;
        let mut index = 0;
        model.visit_params_mut(&mut |_, p| {
            if moments.len() <= index {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            if p.trainable && !p.grad.is_empty() {
                let (m, v) = &mut moments[index];
                for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * *m / (libm::sqrtf(*v) + eps);
                }
            }
            p.zero_grad();
            index += 1;
        });
    }
}

/// Cross-entropy of softmax(`logits`) against `target`, with its gradient.
pub fn cross_entropy(logits: &[f32], target: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64));
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l as f64 - max)).collect();
    let total: f64 = exps.iter().sum();
    let loss = libm::log(total) - (logits[target] as f64 - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| (e / total - if i == target { 1.0 } else { 0.0 }) as f32)
        .collect();
    (loss, grad)
}

/// A preprocessed training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub frame_ref: String,
    pub input: Tensor,
    pub zone: GazeZone,
}

#[derive(Debug, Error)]
pub enum PrepareError<E> {
    #[error("loading frame `{frame_ref}`: {source}")]
    Load { frame_ref: String, source: E },
    #[error("frame `{frame_ref}`: {source}")]
    Preprocess { frame_ref: String, source: PreprocessError },
}

/// Examples plus the frames dropped because no face was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub examples: Vec<Example>,
    pub no_face: Vec<String>,
}

/// Loads and preprocesses `samples`; frames without a detectable face are
/// dropped and listed instead of failing the whole set.
pub fn prepare_examples<E, D: FaceDetector + ?Sized>(
    samples: &[LabeledSample],
    preprocessor: &Preprocessor,
    detector: &D,
    mut load: impl FnMut(&str) -> Result<RgbImage, E>,
) -> Result<Prepared, PrepareError<E>> {
    let mut out = Prepared { examples: Vec::with_capacity(samples.len()), no_face: Vec::new() };
    for s in samples {
        let frame = load(&s.frame_ref).map_err(|source| PrepareError::Load { frame_ref: s.frame_ref.clone(), source })?;
        match preprocessor.prepare(&s.frame_ref, &frame, detector) {
            Ok(input) => out.examples.push(Example { frame_ref: s.frame_ref.clone(), input: input.pixels, zone: s.zone }),
            Err(PreprocessError::NoFace(_)) => out.no_face.push(s.frame_ref.clone()),
            Err(source) => return Err(PrepareError::Preprocess { frame_ref: s.frame_ref.clone(), source }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u32,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_accuracy: f64,
    pub wall_ms: Option<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_frames: usize,
    pub validation_frames: usize,
    pub dropped_no_face: usize,
    /// Mean training-set loss of the model before the first update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("frame `{0}` appears in both training and validation data")]
    Leak(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss became non-finite in epoch {epoch}; last good checkpoint: {last_good:?}")]
    Diverged { epoch: u32, last_good: Option<String>, report: TrainReport },
    #[error("epoch hook failed: {0}")]
    Hook(String),
}

/// Side effects of a training run: checkpointing and timing.
pub trait TrainHooks {
    /// Milliseconds on a monotonic clock, if one is available.
    fn now_ms(&mut self) -> Option<f64> {
        None
    }

    /// Called after every completed epoch; returns a checkpoint reference.
    fn on_epoch(&mut self, _model: &GazeModel, _record: &EpochRecord) -> Result<Option<String>, String> {
        Ok(None)
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Loss, accuracy and confusion of `model` over `examples` without dropout.
pub fn evaluate_examples(model: &GazeModel, examples: &[Example]) -> Result<(f64, ConfusionMatrix), ModelError> {
    let mut loss = 0.0;
    let mut cm = ConfusionMatrix::zones();
    for ex in examples {
        let p = model.forward(&ex.input)?;
        loss += cross_entropy(&p.logits, ex.zone.ordinal()).0;
        cm.record(ex.zone, argmax_zone(&p.distribution));
    }
    Ok((loss / examples.len().max(1) as f64, cm))
}

fn accuracy(cm: &ConfusionMatrix) -> f64 {
    if cm.total() == 0 {
        0.0
    } else {
        100.0 * cm.correct() as f64 / cm.total() as f64
    }
}

/// Fine-tunes every trainable parameter of `model` on `train`.
pub fn finetune(
    model: &mut GazeModel,
    train: &[Example],
    validation: &[Example],
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainReport, TrainError> {
    finetune_with_drops(model, train, validation, 0, config, hooks)
}

/// [`finetune`] recording how many frames were dropped during preparation.
pub fn finetune_with_drops(
    model: &mut GazeModel,
    train: &[Example],
    validation: &[Example],
    dropped_no_face: usize,
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let mut seen: Vec<&str> = train.iter().map(|e| e.frame_ref.as_str()).collect();
    seen.sort_unstable();
    if let Some(v) = validation.iter().find(|v| seen.binary_search(&v.frame_ref.as_str()).is_ok()) {
        return Err(TrainError::Leak(v.frame_ref.clone()));
    }
    for ex in train.iter().chain(validation) {
        model.check_input(ex.input.shape())?;
    }

    let (initial_train_loss, _) = evaluate_examples(model, train)?;
    let mut report = TrainReport {
        config: config.clone(),
        train_frames: train.len(),
        validation_frames: validation.len(),
        dropped_no_face,
        initial_train_loss,
        epochs: Vec::new(),
    };
    let mut adam = Adam::new(config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d0d0);
    model.zero_grad();

    for epoch in 1..=config.epochs {
        let started = hooks.now_ms();
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut train_cm = ConfusionMatrix::zones();
        for batch in order.chunks(config.batch_size) {
            for &i in batch {
                let ex = &train[i];
                let mut pass = Pass::train(&mut dropout_rng);
                let (out, caches) = model.forward_train(&ex.input, &mut pass)?;
                let (loss, grad) = cross_entropy(&out.data()[..ZONE_COUNT], ex.zone.ordinal());
                if !loss.is_finite() {
                    let last_good = report.epochs.iter().rev().find_map(|r| r.checkpoint.clone());
                    return Err(TrainError::Diverged { epoch, last_good, report });
                }
                loss_sum += loss;
                let mut logits = [0.0f32; ZONE_COUNT];
                logits.copy_from_slice(&out.data()[..ZONE_COUNT]);
                train_cm.record(ex.zone, argmax_zone(&ZoneDistribution::from_logits(&logits)));
                model.backward(caches, Tensor::vector(grad));
            }
            adam.step(model, batch.len());
        }
        let (val_loss, val_cm) = evaluate_examples(model, validation)?;
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: accuracy(&train_cm),
            val_loss,
            val_accuracy: accuracy(&val_cm),
            val_macro_accuracy: val_cm.macro_over_present().unwrap_or(0.0),
            wall_ms: None,
            checkpoint: None,
        };
        if !val_loss.is_finite() {
            let last_good = report.epochs.iter().rev().find_map(|r| r.checkpoint.clone());
            return Err(TrainError::Diverged { epoch, last_good, report });
        }
        record.wall_ms = match (started, hooks.now_ms()) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        record.checkpoint = hooks.on_epoch(model, &record).map_err(TrainError::Hook)?;
        report.epochs.push(record);
    }
    Ok(report)
}

/// The epoch with the highest validation macro accuracy; ties go to the
/// earliest epoch.
pub fn select_best(report: &TrainReport) -> Option<&EpochRecord> {
    report.epochs.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
        Some(b) if b.val_macro_accuracy >= r.val_macro_accuracy => Some(b),
        _ => Some(r),
    })
}

/// Result of comparing analytic and finite-difference head gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over all head parameters.
    pub relative_error: f64,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradientCheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the reference evaluator does not support layer `{0}` after the head")]
    Unsupported(String),
    #[error("micro-batch is empty")]
    Empty,
}

/// Compares the head gradient of the mean cross-entropy over `batch` with
/// central differences of a double-precision re-evaluation of the head.
pub fn gradient_check(
    model: &mut GazeModel,
    batch: &[(Tensor, GazeZone)],
    step: f64,
) -> Result<GradientCheck, GradientCheckError> {
    if batch.is_empty() {
        return Err(GradientCheckError::Empty);
    }
    let features: Vec<Tensor> = batch.iter().map(|(x, _)| model.head_input(x)).collect::<Result<_, _>>()?;
    let suffix = model.layers()[model.head_index()..].to_vec();
    for l in &suffix[1..] {
        if !matches!(l, Layer::Relu | Layer::GlobalAvgPool | Layer::Flatten | Layer::Dropout(_)) {
            return Err(GradientCheckError::Unsupported(l.describe()));
        }
    }

    model.zero_grad();
    for (f, (_, zone)) in features.iter().zip(batch) {
        let (out, caches) = model.logits_from_head_input(f.clone(), &mut Pass::record());
        let (_, grad) = cross_entropy(&out.data()[..ZONE_COUNT], zone.ordinal());
        model.backward_from_head(caches, Tensor::vector(grad));
    }
    let n = batch.len() as f32;
    let (weight, bias) = match model.head() {
        Layer::Conv(c) => (c.weight.clone(), c.bias.clone()),
        Layer::Linear(l) => (l.weight.clone(), l.bias.clone()),
        _ => unreachable!("the head is a conv or linear layer"),
    };
    model.zero_grad();
    let mut w: Vec<f64> = weight.value.iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = bias.value.iter().map(|&v| v as f64).collect();
    let head = HeadRef::of(&suffix[0]);
    let tail = &suffix[1..];
    let labels: Vec<usize> = batch.iter().map(|(_, z)| z.ordinal()).collect();
    let loss = |w: &[f64], b: &[f64]| -> f64 {
        features
            .iter()
            .zip(&labels)
            .map(|(f, &t)| {
                let logits = reference_logits(&head, w, b, tail, f);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|l| libm::exp(l - max)).sum();
                libm::log(total) - (logits[t] - max)
            })
            .sum::<f64>()
            / labels.len() as f64
    };

    let (mut diff, mut an_norm, mut nu_norm) = (0.0f64, 0.0f64, 0.0f64);
    let mut compare = |analytic: f64, numeric: f64| {
        diff += (analytic - numeric) * (analytic - numeric);
        an_norm += analytic * analytic;
        nu_norm += numeric * numeric;
    };
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + step;
        let up = loss(&w, &b);
        w[i] = orig - step;
        let down = loss(&w, &b);
        w[i] = orig;
        compare((weight.grad[i] / n) as f64, (up - down) / (2.0 * step));
    }
    for i in 0..b.len() {
        let orig = b[i];
        b[i] = orig + step;
        let up = loss(&w, &b);
        b[i] = orig - step;
        let down = loss(&w, &b);
        b[i] = orig;
        compare((bias.grad[i] / n) as f64, (up - down) / (2.0 * step));
    }
    let scale = libm::sqrt(an_norm.max(nu_norm));
    let relative_error = if scale == 0.0 { 0.0 } else { libm::sqrt(diff) / scale };
    Ok(GradientCheck { relative_error, parameters: w.len() + b.len() })
}

struct HeadRef {
    conv: Option<(usize, usize, usize)>,
    inputs: usize,
    outputs: usize,
}

impl HeadRef {
    fn of(layer: &Layer) -> Self {
        match layer {
            Layer::Conv(c) => {
                Self { conv: Some((c.kernel, c.stride, c.padding)), inputs: c.in_channels, outputs: c.out_channels }
            }
            Layer::Linear(l) => Self { conv: None, inputs: l.in_features, outputs: l.out_features },
            _ => unreachable!("the head is a conv or linear layer"),
        }
    }
}

/// Direct-loop double-precision evaluation of the head and the layers after it.
fn reference_logits(head: &HeadRef, w: &[f64], b: &[f64], tail: &[Layer], x: &Tensor) -> Vec<f64> {
    let [c, h, wd] = x.shape();
    let input: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let (mut data, mut shape) = match head.conv {
        None => {
            let y = (0..head.outputs)
                .map(|o| b[o] + (0..head.inputs).map(|i| w[o * head.inputs + i] * input[i]).sum::<f64>())
                .collect::<Vec<_>>();
            (y, [head.outputs, 1, 1])
        }
        Some((k, s, p)) => {
            let ho = (h + 2 * p - k) / s + 1;
            let wo = (wd + 2 * p - k) / s + 1;
            let mut y = vec![0.0; head.outputs * ho * wo];
            for o in 0..head.outputs {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w[((o * c + ci) * k + ki) * k + kj]
                                            * input[(ci * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        y[(o * ho + oy) * wo + ox] = acc;
                    }
                }
            }
            (y, [head.outputs, ho, wo])
        }
    };
    for l in tail {
        match l {
            Layer::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::GlobalAvgPool => {
                let plane = shape[1] * shape[2];
                data = data.chunks(plane).map(|ch| ch.iter().sum::<f64>() / plane as f64).collect();
                shape = [shape[0], 1, 1];
            }
            _ => {}
        }
    }
    data
}

impl core::fmt::Display for GradientCheck {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "relative error {:.3e} over {} parameters", self.relative_error, self.parameters)
    }
}

impl TrainReport {
    pub fn best_epoch(&self) -> Option<u32> {
        select_best(self).map(|r| r.epoch)
    }

    pub fn summary(&self) -> String {
        match self.epochs.last() {
            Some(r) => alloc::format!(
                "{} epochs, final train loss {:.4}, val macro {:.2}%",
                self.epochs.len(),
                r.train_loss,
                r.val_macro_accuracy
            ),
            None => "no epochs".to_string(),
        }
    }
}
