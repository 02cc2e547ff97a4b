//! Inference timing of a checkpoint.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use gazezone_core::evaluation::{benchmark, TimingStats};
use gazezone_core::models::GazeModel;
use gazezone_core::nn::Tensor;
use gazezone_core::reference::{forward_ms_reference, END_TO_END_HZ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::Evaluator;
use crate::frames::load_rgb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backbone: String,
    pub width_divisor: u32,
    pub resolution: u32,
    pub warmup: usize,
    /// Forward pass on a prepared input.
    pub forward: TimingStats,
    /// Frame decode, face lookup, crop, resample and forward pass.
    pub end_to_end: Option<TimingStats>,
    /// Published figures for comparison only; local hardware differs.
    pub reference_forward_ms: Option<f64>,
    pub reference_end_to_end_hz: f64,
}

impl BenchReport {
    /// Human-readable lines; reference figures are marked as annotations.
    pub fn lines(&self) -> Vec<String> {
        let fmt = |name: &str, s: &TimingStats| {
            format!(
                "{name}: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms over {} iterations ({:.1} Hz)",
                s.mean_ms,
                s.p50_ms,
                s.p95_ms,
                s.iterations,
                1e3 / s.mean_ms
            )
        };
        let mut out = vec![format!("{} (width / {}) at {}x{}", self.backbone, self.width_divisor, self.resolution, self.resolution)];
        out.push(fmt("forward", &self.forward));
        if let Some(e) = &self.end_to_end {
            out.push(fmt("end-to-end", e));
        }
        match self.reference_forward_ms {
            Some(ms) => out.push(format!("reference (annotation only): published forward time {ms} ms on a desktop GPU")),
            None => out.push("reference (annotation only): no published forward time for this backbone and size".into()),
        }
        out.push(format!(
            "reference (annotation only): published end-to-end rate {} Hz including face detection",
            self.reference_end_to_end_hz
        ));
        out
    }
}

fn clock() -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

/// Times `model` on a seeded random input of `resolution` x `resolution`.
pub fn time_forward(model: &GazeModel, resolution: u32, iterations: usize, warmup: usize, seed: u64) -> Result<TimingStats> {
    let r = resolution as usize;
    model.check_input([3, r, r])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_vec(3, r, r, (0..3 * r * r).map(|_| rng.random_range(-1.0..1.0)).collect());
    let (stats, _) = benchmark(iterations, warmup, clock(), || {
        std::hint::black_box(model.forward(&input).expect("input shape was checked"));
    })?;
    Ok(stats)
}

/// Times the whole path from an image file to a zone.
pub fn time_end_to_end(evaluator: &Evaluator, frame: &Path, iterations: usize, warmup: usize) -> Result<TimingStats> {
    let key = frame.to_string_lossy().into_owned();
    // Fail before timing if the frame cannot be processed at all.
    let image = load_rgb(frame)?;
    evaluator
        .preprocessor
        .prepare(&key, &image, &evaluator.detector)
        .with_context(|| format!("preprocessing {}", frame.display()))?;
    let (stats, _) = benchmark(iterations, warmup, clock(), || {
        let image = load_rgb(frame).expect("frame was readable");
        let input = evaluator.preprocessor.prepare(&key, &image, &evaluator.detector).expect("frame was preparable");
        std::hint::black_box(evaluator.model.forward(&input.pixels).expect("prepared input fits"));
    })?;
    Ok(stats)
}

pub fn report(
    model: &GazeModel,
    resolution: u32,
    warmup: usize,
    forward: TimingStats,
    end_to_end: Option<TimingStats>,
) -> BenchReport {
    let spec = model.spec();
    BenchReport {
        backbone: spec.family.name().into(),
        width_divisor: spec.width_divisor,
        resolution,
        warmup,
        forward,
        end_to_end,
        reference_forward_ms: forward_ms_reference(spec.family, resolution),
        reference_end_to_end_hz: END_TO_END_HZ,
    }
}
