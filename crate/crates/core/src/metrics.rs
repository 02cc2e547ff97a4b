//! Confusion matrices, accuracy averages and normalized entropy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zone::{GazeZone, ZONE_COUNT};

/// Square count matrix; row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no samples of true class {0}; per-class accuracy is undefined")]
    EmptyRow(String),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("count matrix must be {n}x{n}, got {len} entries")]
    BadShape { n: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("normalized entropy needs at least 2 classes, got {0}")]
pub struct ClassCountError(pub usize);

fn class_name(n: usize, i: usize) -> String {
    if n == ZONE_COUNT {
        String::from(GazeZone::ALL[i].name())
    } else {
        format!("#{i}")
    }
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, counts: vec![0; n * n] }
    }

    /// A 7x7 matrix over [`GazeZone`]s.
    pub fn zones() -> Self {
        Self::new(ZONE_COUNT)
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self, MetricError> {
        if counts.len() != n * n {
            return Err(MetricError::BadShape { n, len: counts.len() });
        }
        Ok(Self { n, counts })
    }

    pub fn from_rows<const N: usize>(rows: [[u64; N]; N]) -> Self {
        Self { n: N, counts: rows.iter().flatten().copied().collect() }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn record(&mut self, truth: GazeZone, predicted: GazeZone) {
        self.add(truth.ordinal(), predicted.ordinal());
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n, other.n, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Row percentage in hundredths of a percent, rounded half up.
    pub fn percent_hundredths(&self, truth: usize, predicted: usize) -> Option<u64> {
        let row = self.row_sum(truth);
        (row > 0).then(|| (self.get(truth, predicted) * 20_000 + row) / (2 * row))
    }

    /// Row percentages rounded half up to two decimals; empty rows are `None`.
    pub fn percentages(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.percent_hundredths(i, j).map(|h| h as f64 / 100.0)).collect())
            .collect()
    }

    /// Per-class recall in percent; `None` for classes without samples.
    pub fn class_accuracies(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|i| {
                let row = self.row_sum(i);
                (row > 0).then(|| 100.0 * self.get(i, i) as f64 / row as f64)
            })
            .collect()
    }

    /// Macro average restricted to classes that have samples.
    pub fn macro_over_present(&self) -> Option<f64> {
        let present: Vec<f64> = self.class_accuracies().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn build_confusion(predictions: &[(GazeZone, GazeZone)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::zones();
    for &(t, p) in predictions {
        cm.record(t, p);
    }
    cm
}

/// Unweighted mean of per-class accuracies, in percent.
pub fn macro_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    if cm.n == 0 {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for (i, acc) in cm.class_accuracies().into_iter().enumerate() {
        sum += acc.ok_or_else(|| MetricError::EmptyRow(class_name(cm.n, i)))?;
    }
    Ok(sum / cm.n as f64)
}

/// Correct predictions over all samples, in percent.
pub fn micro_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    match cm.total() {
        0 => Err(MetricError::Empty),
        total => Ok(100.0 * cm.correct() as f64 / total as f64),
    }
}

/// Shannon entropy of `probs` divided by `ln n`, with `0 ln 0 = 0`.
pub fn normalized_entropy(probs: &[f64], n: usize) -> Result<f64, ClassCountError> {
    if n < 2 {
        return Err(ClassCountError(n));
    }
    let nf = n as f64;
    // 1 - sum p ln(n p) / ln n is algebraically the same quantity and is
    // exactly 1 for the uniform distribution.
    let excess: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(nf * p)).sum();
    Ok((1.0 - excess / libm::log(nf)).clamp(0.0, 1.0))
}

/// Rounds to two decimals, half away from zero.
pub fn round2(v: f64) -> f64 {
    libm::round(v * 100.0) / 100.0
}
