//! Published reference results, kept as annotations for reports.
//!
//! Nothing here is ever compared against a locally trained model. The
//! confusion tables are used to audit the metric code and to flag internal
//! inconsistencies between a table body and its caption.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::geometry::round_half_up;
use crate::metrics::{macro_accuracy, micro_accuracy, ConfusionMatrix};
use crate::models::Family;
use crate::preprocess::StrategyKind;
use crate::zone::ZONE_COUNT;

/// Per-zone test frames of the reference cross-subject split, in zone order.
pub const TEST_COUNTS: [u64; ZONE_COUNT] = [1023, 1021, 1022, 1159, 956, 1140, 1093];
/// Per-zone training frames after balancing.
pub const TRAIN_COUNTS: [u64; ZONE_COUNT] = [3505, 3195, 3725, 2831, 3533, 3580, 2565];
/// Per-zone annotated frames before balancing.
pub const ANNOTATED_COUNTS: [u64; ZONE_COUNT] = [21522, 4216, 4751, 4143, 4489, 4721, 3673];

/// A reported row-normalized confusion matrix (percent) with the macro and
/// micro accuracies printed next to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportedConfusion {
    pub name: &'static str,
    pub percentages: [[f64; ZONE_COUNT]; ZONE_COUNT],
    pub caption_macro: f64,
    pub caption_micro: f64,
}

pub const SQUEEZENET_HALF_FACE: ReportedConfusion = ReportedConfusion {
    name: "SqueezeNet, half face",
    percentages: [
        [97.65, 0.0, 1.17, 0.0, 0.68, 0.39, 0.1],
        [0.0, 100.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.23, 0.0, 94.03, 0.0, 0.0, 0.1, 2.64],
        [0.09, 7.77, 0.0, 90.42, 0.0, 1.12, 0.6],
        [0.0, 0.1, 0.0, 0.0, 99.9, 0.0, 0.31],
        [5.79, 0.0, 0.09, 2.63, 0.0, 89.21, 2.28],
        [0.73, 0.37, 1.83, 1.28, 0.0, 0.73, 95.06],
    ],
    caption_macro: 95.18,
    caption_micro: 94.96,
};

pub const VGG16_HALF_FACE: ReportedConfusion = ReportedConfusion {
    name: "VGG16, half face",
    percentages: [
        [95.31, 0.2, 1.56, 0.0, 1.76, 1.08, 0.1],
        [0.0, 99.51, 0.0, 0.0, 0.1, 0.0, 0.39],
        [1.96, 0.0, 85.71, 0.0, 0.0, 0.1, 12.23],
        [0.17, 6.56, 0.35, 87.58, 0.26, 4.92, 0.17],
        [0.0, 0.21, 0.0, 0.0, 99.48, 0.0, 0.31],
        [1.49, 0.61, 0.0, 5.27, 0.0, 90.87, 1.76],
        [0.91, 0.82, 0.18, 0.73, 0.09, 2.2, 95.06],
    ],
    caption_macro: 93.59,
    caption_micro: 93.17,
};

pub const ALEXNET_HALF_FACE: ReportedConfusion = ReportedConfusion {
    name: "AlexNet, half face",
    percentages: [
        [85.92, 0.29, 2.05, 0.0, 9.68, 1.86, 0.2],
        [0.0, 99.9, 0.0, 0.0, 0.0, 0.0, 0.1],
        [1.57, 0.0, 84.54, 0.39, 0.0, 1.86, 11.64],
        [0.0, 9.92, 0.0, 74.55, 0.52, 3.28, 11.73],
        [0.0, 1.36, 0.0, 0.0, 98.64, 0.0, 0.0],
        [5.61, 0.0, 1.32, 4.21, 0.09, 86.49, 2.28],
        [3.39, 0.73, 0.64, 1.65, 0.55, 0.73, 92.31],
    ],
    caption_macro: 88.55,
    caption_micro: 88.91,
};

pub const RESNET50_HALF_FACE: ReportedConfusion = ReportedConfusion {
    name: "ResNet50, half face",
    percentages: [
        [86.12, 0.1, 2.15, 0.0, 9.68, 0.49, 1.47],
        [0.0, 96.67, 0.0, 0.1, 0.0, 0.0, 3.23],
        [1.17, 0.0, 90.22, 0.0, 0.2, 0.1, 8.32],
        [0.26, 6.21, 0.0, 89.99, 0.26, 0.0, 3.28],
        [0.0, 0.0, 0.0, 0.0, 100.0, 0.0, 0.0],
        [1.49, 0.0, 0.35, 3.6, 0.0, 79.37, 15.19],
        [0.09, 0.18, 0.09, 0.37, 0.0, 0.0, 99.27],
    ],
    caption_macro: 91.43,
    caption_micro: 91.66,
};

/// Head-pose Random Forest baseline on a temporal split; reference only.
pub const RANDOM_FOREST_BASELINE: ReportedConfusion = ReportedConfusion {
    name: "Random Forest head-pose baseline",
    percentages: [
        [84.16, 0.0, 7.72, 0.68, 1.47, 5.38, 0.59],
        [0.0, 99.12, 0.0, 0.0, 0.39, 0.0, 0.49],
        [6.17, 0.0, 71.17, 0.33, 0.67, 1.83, 19.83],
        [0.78, 8.57, 0.0, 32.55, 15.41, 0.0, 42.68],
        [0.0, 0.84, 0.0, 0.21, 98.74, 0.0, 0.21],
        [27.81, 0.0, 6.84, 2.89, 0.0, 40.96, 21.49],
        [6.99, 4.56, 11.36, 10.87, 7.18, 4.37, 54.66],
    ],
    caption_macro: 68.76,
    caption_micro: 67.15,
};

/// The four half-face tables of the convolutional models.
pub const CNN_HALF_FACE_TABLES: [&ReportedConfusion; 4] =
    [&VGG16_HALF_FACE, &SQUEEZENET_HALF_FACE, &ALEXNET_HALF_FACE, &RESNET50_HALF_FACE];

/// Strategy column order of [`ABLATION_MACRO`].
pub const ABLATION_STRATEGIES: [StrategyKind; 4] =
    [StrategyKind::HalfFace, StrategyKind::Face, StrategyKind::FaceContext, StrategyKind::FaceEmbeddedFov];

/// Reported macro accuracy per backbone and crop strategy.
pub const ABLATION_MACRO: [(Family, [f64; 4]); 4] = [
    (Family::AlexNet, [88.91, 82.08, 75.56, 62.21]),
    (Family::ResNet50, [91.66, 89.34, 86.67, 87.04]),
    (Family::Vgg16, [93.36, 92.74, 91.21, 88.92]),
    (Family::SqueezeNet, [95.18, 94.81, 92.74, 89.37]),
];

/// Reported SqueezeNet macro accuracy on the face-embedded FoV crop by input size.
pub const RESOLUTION_MACRO: [(u32, f64); 3] = [(224, 89.37), (448, 90.78), (625, 92.13)];

/// Reported single forward pass time in milliseconds on a desktop GPU.
pub const FORWARD_MS: [(Family, u32, f64); 6] = [
    (Family::AlexNet, 227, 2.3),
    (Family::Vgg16, 224, 10.0),
    (Family::ResNet50, 224, 17.0),
    (Family::SqueezeNet, 224, 2.5),
    (Family::SqueezeNet, 448, 4.0),
    (Family::SqueezeNet, 625, 6.0),
];

/// Reported rate of the full detector, crop and classify pipeline.
pub const END_TO_END_HZ: f64 = 16.0;

pub fn ablation_reference(family: Family, strategy: StrategyKind) -> Option<f64> {
    let col = ABLATION_STRATEGIES.iter().position(|&s| s == strategy)?;
    ABLATION_MACRO.iter().find(|(f, _)| *f == family).map(|(_, row)| row[col])
}

pub fn resolution_reference(resolution: u32) -> Option<f64> {
    RESOLUTION_MACRO.iter().find(|(r, _)| *r == resolution).map(|&(_, v)| v)
}

pub fn forward_ms_reference(family: Family, resolution: u32) -> Option<f64> {
    FORWARD_MS.iter().find(|(f, r, _)| *f == family && *r == resolution).map(|&(_, _, ms)| ms)
}

/// Integer counts whose row percentages approximate `percentages` for the
/// given row totals.
///
/// The diagonal is `pct * n / 100` rounded half up. The remaining frames of
/// each row are spread over the off-diagonal cells in proportion to their
/// percentages by largest remainder, so every row sums to its total even
/// when the printed percentages do not add up to 100.
pub fn counts_from_percentages(percentages: &[[f64; ZONE_COUNT]; ZONE_COUNT], totals: &[u64; ZONE_COUNT]) -> ConfusionMatrix {
    let mut counts = Vec::with_capacity(ZONE_COUNT * ZONE_COUNT);
    for (i, (row, &n)) in percentages.iter().zip(totals).enumerate() {
        let diag = (round_half_up(row[i] * n as f64 / 100.0).max(0) as u64).min(n);
        let rest = n - diag;
        let off_sum: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p).sum();
        let mut cells = [0u64; ZONE_COUNT];
        cells[i] = diag;
        if off_sum > 0.0 {
            let mut remainders: Vec<(f64, usize)> = Vec::new();
            let mut assigned = 0;
            for (j, &p) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                let exact = p / off_sum * rest as f64;
                let floor = libm::floor(exact) as u64;
                cells[j] = floor;
                assigned += floor;
                remainders.push((exact - floor as f64, j));
            }
            remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in remainders.iter().take((rest - assigned) as usize) {
                cells[j] += 1;
            }
        } else {
            cells[i] = n;
        }
        counts.extend_from_slice(&cells);
    }
    ConfusionMatrix::from_counts(ZONE_COUNT, counts).expect("7x7 by construction")
}

/// Consistency check of one reported table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableAudit {
    pub name: &'static str,
    /// Mean of the printed diagonal, which is the macro accuracy by definition.
    pub diagonal_mean: f64,
    /// Micro accuracy of counts rebuilt with [`TEST_COUNTS`].
    pub rebuilt_micro: f64,
    pub rebuilt_macro: f64,
    pub caption_macro: f64,
    pub caption_micro: f64,
    /// Zones whose printed row does not sum to 100 within rounding.
    pub off_rows: Vec<(usize, f64)>,
    pub discrepancies: Vec<String>,
}

impl TableAudit {
    pub fn is_consistent(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

/// Tolerance used when comparing a two-decimal caption to a recomputed value.
pub const CAPTION_TOLERANCE: f64 = 0.01;

pub fn audit_table(table: &ReportedConfusion) -> TableAudit {
    let diagonal_mean = (0..ZONE_COUNT).map(|i| table.percentages[i][i]).sum::<f64>() / ZONE_COUNT as f64;
    let cm = counts_from_percentages(&table.percentages, &TEST_COUNTS);
    let rebuilt_macro = macro_accuracy(&cm).expect("rows are non-empty");
    let rebuilt_micro = micro_accuracy(&cm).expect("matrix is non-empty");
    // Each of the 7 printed cells can be off by half a hundredth.
    let off_rows: Vec<(usize, f64)> = table
        .percentages
        .iter()
        .enumerate()
        .map(|(i, row)| (i, row.iter().sum::<f64>()))
        .filter(|(_, s)| (s - 100.0).abs() > 0.035 + 1e-9)
        .collect();

    let close = |a: f64, b: f64| (a - b).abs() <= CAPTION_TOLERANCE + 1e-9;
    let mut discrepancies = Vec::new();
    if !close(diagonal_mean, table.caption_macro) {
        let mut note = format!(
            "{}: diagonal mean {:.2} differs from the captioned macro accuracy {:.2}",
            table.name, diagonal_mean, table.caption_macro
        );
        if close(diagonal_mean, table.caption_micro) {
            note.push_str(&format!("; it equals the captioned micro accuracy {:.2}, so the labels look swapped", table.caption_micro));
        }
        discrepancies.push(note);
    }
    for &(i, s) in &off_rows {
        discrepancies.push(format!("{}: row {} sums to {:.2}%", table.name, crate::zone::GazeZone::ALL[i], s));
    }
    TableAudit {
        name: table.name,
        diagonal_mean,
        rebuilt_micro,
        rebuilt_macro,
        caption_macro: table.caption_macro,
        caption_micro: table.caption_micro,
        off_rows,
        discrepancies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rebuilt_squeezenet_counts_match_the_caption() {
        let cm = counts_from_percentages(&SQUEEZENET_HALF_FACE.percentages, &TEST_COUNTS);
        for (i, &n) in TEST_COUNTS.iter().enumerate() {
            assert_eq!(cm.row_sum(i), n);
        }
        let macro_ = macro_accuracy(&cm).unwrap();
        let micro = micro_accuracy(&cm).unwrap();
        assert!((macro_ - 95.18).abs() <= 0.01, "{macro_}");
        assert!((micro - 94.96).abs() <= 0.05, "{micro}");
        // Diagonal percentages come back to the printed two decimals.
        for i in 0..ZONE_COUNT {
            let h = cm.percent_hundredths(i, i).unwrap() as f64 / 100.0;
            assert!((h - SQUEEZENET_HALF_FACE.percentages[i][i]).abs() <= 0.01 + 1e-9, "zone {i}: {h}");
        }
    }

    #[test]
    fn consistent_rows_reproduce_every_cell() {
        let cm = counts_from_percentages(&SQUEEZENET_HALF_FACE.percentages, &TEST_COUNTS);
        let audit = audit_table(&SQUEEZENET_HALF_FACE);
        for i in 0..ZONE_COUNT {
            if audit.off_rows.iter().any(|&(r, _)| r == i) {
                continue;
            }
            for j in 0..ZONE_COUNT {
                let got = cm.percent_hundredths(i, j).unwrap() as f64 / 100.0;
                let want = SQUEEZENET_HALF_FACE.percentages[i][j];
                assert!((got - want).abs() <= 0.05 + 1e-9, "cell ({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn squeezenet_caption_agrees_with_its_body() {
        let audit = audit_table(&SQUEEZENET_HALF_FACE);
        assert!((audit.diagonal_mean - 95.18).abs() < 0.005);
        // The only finding is the rearview row adding up to 100.31%.
        assert_eq!(audit.off_rows.len(), 1);
        assert_eq!(audit.off_rows[0].0, 4);
        assert_eq!(audit.discrepancies.len(), 1);
    }

    #[test]
    fn other_half_face_tables_are_flagged() {
        for (table, mean) in [(&VGG16_HALF_FACE, 93.36), (&ALEXNET_HALF_FACE, 88.91), (&RESNET50_HALF_FACE, 91.66)] {
            let audit = audit_table(table);
            assert!((audit.diagonal_mean - mean).abs() <= 0.01, "{}: {}", table.name, audit.diagonal_mean);
            assert!(audit.discrepancies.iter().any(|d| d.contains("captioned macro")), "{:?}", audit.discrepancies);
        }
        assert!(audit_table(&ALEXNET_HALF_FACE).discrepancies[0].contains("swapped"));
    }

    #[test]
    fn diagonal_means_match_the_ablation_half_face_column() {
        for (family, row) in ABLATION_MACRO {
            let table = match family {
                Family::AlexNet => &ALEXNET_HALF_FACE,
                Family::ResNet50 => &RESNET50_HALF_FACE,
                Family::Vgg16 => &VGG16_HALF_FACE,
                Family::SqueezeNet => &SQUEEZENET_HALF_FACE,
            };
            assert!((audit_table(table).diagonal_mean - row[0]).abs() <= 0.01, "{family}");
        }
    }

    #[test]
    fn lookups() {
        assert_eq!(resolution_reference(625), Some(92.13));
        assert_eq!(resolution_reference(300), None);
        assert_eq!(forward_ms_reference(Family::SqueezeNet, 224), Some(2.5));
        assert_eq!(ablation_reference(Family::Vgg16, StrategyKind::FaceEmbeddedFov), Some(88.92));
        assert_eq!(TEST_COUNTS.iter().sum::<u64>(), 7414);
    }
}
