//! Train / validation / test partitions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DatasetError, LabeledSample};
use crate::geometry::round_half_up;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    CrossSubject,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl DatasetSplit {
    /// Checks disjointness plus the kind-specific leakage guarantee.
    pub fn check_invariants(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeMap::new();
        for (part, samples) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            for s in samples.iter() {
                if let Some(other) = seen.insert(s.frame_ref.as_str(), part) {
                    return Err(DatasetError::InvariantViolated(format!(
                        "frame `{}` appears in both {other} and {part}",
                        s.frame_ref
                    )));
                }
            }
        }
        match self.kind {
            SplitKind::CrossSubject => {
                let fit: BTreeSet<&str> =
                    self.train.iter().chain(&self.validation).map(|s| s.subject_id.as_str()).collect();
                if let Some(s) = self.test.iter().find(|s| fit.contains(s.subject_id.as_str())) {
                    return Err(DatasetError::InvariantViolated(format!(
                        "subject `{}` is in both the fitting and the test partitions",
                        s.subject_id
                    )));
                }
            }
            SplitKind::Temporal => {
                let mut spans: BTreeMap<&str, [Option<(f64, f64)>; 3]> = BTreeMap::new();
                for (slot, samples) in [&self.train, &self.validation, &self.test].into_iter().enumerate() {
                    for s in samples {
                        let span = &mut spans.entry(s.drive_id.as_str()).or_default()[slot];
                        *span = Some(match *span {
                            None => (s.timestamp, s.timestamp),
                            Some((lo, hi)) => (lo.min(s.timestamp), hi.max(s.timestamp)),
                        });
                    }
                }
                for (drive, parts) in spans {
                    let present: Vec<(f64, f64)> = parts.iter().flatten().copied().collect();
                    for w in present.windows(2) {
                        if w[0].1 >= w[1].0 {
                            return Err(DatasetError::InvariantViolated(format!(
                                "drive `{drive}` partitions overlap in time"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn subjects(samples: &[LabeledSample]) -> BTreeSet<String> {
        samples.iter().map(|s| s.subject_id.clone()).collect()
    }
}

/// Validation carving parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarveConfig {
    pub fraction: f64,
    /// Minimum time between any validation frame and any retained training
    /// frame of the same drive.
    pub time_gap_s: f64,
}

impl Default for CarveConfig {
    fn default() -> Self {
        Self { fraction: 0.05, time_gap_s: 30.0 }
    }
}

/// A split plus what had to be given up to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub split: DatasetSplit,
    /// Training frames dropped because they sat within the time gap of the
    /// validation segment.
    pub discarded: Vec<LabeledSample>,
    pub warnings: Vec<String>,
}

/// Holds out whole subjects for testing, then carves validation from the rest.
pub fn split_cross_subject(
    samples: &[LabeledSample],
    train_subjects: &BTreeSet<String>,
    test_subjects: &BTreeSet<String>,
    carve: &CarveConfig,
) -> Result<SplitOutcome, DatasetError> {
    if let Some(s) = train_subjects.intersection(test_subjects).next() {
        return Err(DatasetError::OverlappingSubjects(s.clone()));
    }
    let mut fit = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if train_subjects.contains(&s.subject_id) {
            fit.push(s.clone());
        } else if test_subjects.contains(&s.subject_id) {
            test.push(s.clone());
        } else {
            return Err(DatasetError::UnassignedSubject(s.subject_id.clone()));
        }
    }
    let mut warnings = Vec::new();
    if fit.is_empty() {
        warnings.push(String::from("training partition is empty: every subject is held out for testing"));
    }
    if test.is_empty() {
        warnings.push(String::from("test partition is empty"));
    }
    let carved = carve_validation(fit, carve)?;
    let split = DatasetSplit {
        kind: SplitKind::CrossSubject,
        train: carved.train,
        validation: carved.validation,
        test,
    };
    split.check_invariants()?;
    Ok(SplitOutcome { split, discarded: carved.discarded, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for TemporalFractions {
    fn default() -> Self {
        Self { train: 0.70, validation: 0.15, test: 0.15 }
    }
}

/// Chronological per-drive partition: the first `train` share of each
/// drive's frames, then `validation`, then `test`.
///
/// Boundaries never cut through frames sharing a timestamp, so the per-drive
/// ordering train < validation < test is strict.
pub fn split_temporal(samples: &[LabeledSample], fractions: &TemporalFractions) -> Result<DatasetSplit, DatasetError> {
    let parts = [fractions.train, fractions.validation, fractions.test];
    let valid = parts.iter().all(|f| f.is_finite() && *f > 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if !valid {
        return Err(DatasetError::BadFractions(parts));
    }
    let mut split = DatasetSplit { kind: SplitKind::Temporal, train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (_, mut drive) in by_drive(samples) {
        drive.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let n = drive.len();
        let snap = |mut b: usize| {
            while b > 0 && b < n && drive[b].timestamp == drive[b - 1].timestamp {
                b += 1;
            }
            b
        };
        let first = snap((round_half_up(fractions.train * n as f64).max(0) as usize).min(n));
        let second = snap((round_half_up((fractions.train + fractions.validation) * n as f64).max(0) as usize).clamp(first, n));
        split.train.extend_from_slice(&drive[..first]);
        split.validation.extend_from_slice(&drive[first..second]);
        split.test.extend_from_slice(&drive[second..]);
    }
    split.check_invariants()?;
    Ok(split)
}

/// Result of [`carve_validation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Carved {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub discarded: Vec<LabeledSample>,
}

/// Moves the chronological tail of each drive into a validation set.
///
/// The global validation size is `round(fraction * n)`, apportioned over
/// drives by largest remainder. Training frames closer than `time_gap_s` to
/// the start of their drive's validation tail are discarded, so validation
/// never sees near-duplicates of training frames.
pub fn carve_validation(train: Vec<LabeledSample>, config: &CarveConfig) -> Result<Carved, DatasetError> {
    if !(config.fraction.is_finite() && (0.0..1.0).contains(&config.fraction)) {
        return Err(DatasetError::BadValidationFraction(config.fraction));
    }
    if config.fraction == 0.0 || train.is_empty() {
        return Ok(Carved { train, validation: Vec::new(), discarded: Vec::new() });
    }
    let drives = by_drive_indices(&train);
    let n = train.len();
    let target = round_half_up(config.fraction * n as f64).max(0) as usize;

    // Largest-remainder apportionment of `target` over drives.
    let mut quotas: Vec<(usize, f64)> = drives
        .values()
        .map(|idx| {
            let exact = config.fraction * idx.len() as f64;
            let base = libm::floor(exact) as usize;
            (base, exact - base as f64)
        })
        .collect();
    let mut leftover = target.saturating_sub(quotas.iter().map(|q| q.0).sum());
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for i in by_remainder {
        if leftover == 0 {
            break;
        }
        quotas[i].0 += 1;
        leftover -= 1;
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Fate {
        Train,
        Validation,
        Discard,
    }
    let mut fate = alloc::vec![Fate::Train; n];
    for ((drive, idx), (quota, _)) in drives.iter().zip(&quotas) {
        if *quota == 0 {
            continue;
        }
        let mut order = idx.clone();
        order.sort_by(|&a, &b| train[a].timestamp.total_cmp(&train[b].timestamp).then(a.cmp(&b)));
        let cut = order.len() - quota.min(&order.len());
        let start = train[order[cut]].timestamp;
        let mut retained = 0;
        for (pos, &i) in order.iter().enumerate() {
            fate[i] = if pos >= cut {
                Fate::Validation
            } else if start - train[i].timestamp >= config.time_gap_s {
                retained += 1;
                Fate::Train
            } else {
                Fate::Discard
            };
        }
        if retained == 0 {
            return Err(DatasetError::InfeasibleGap { drive_id: drive.clone(), time_gap_s: config.time_gap_s });
        }
    }

    let mut out = Carved { train: Vec::new(), validation: Vec::new(), discarded: Vec::new() };
    for (s, f) in train.into_iter().zip(fate) {
        match f {
            Fate::Train => out.train.push(s),
            Fate::Validation => out.validation.push(s),
            Fate::Discard => out.discarded.push(s),
        }
    }
    Ok(out)
}

fn by_drive_indices(samples: &[LabeledSample]) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        map.entry(s.drive_id.clone()).or_default().push(i);
    }
    map
}

fn by_drive(samples: &[LabeledSample]) -> BTreeMap<String, Vec<LabeledSample>> {
    let mut map: BTreeMap<String, Vec<LabeledSample>> = BTreeMap::new();
    for s in samples {
        map.entry(s.drive_id.clone()).or_default().push(s.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zone::GazeZone;
    use alloc::vec;

    fn drive(drive: &str, subject: &str, n: usize, dt: f64) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let zone = GazeZone::ALL[(i / 10) % 7];
                LabeledSample::new(format!("{drive}/{i}"), subject, drive, i as f64 * dt, zone).unwrap()
            })
            .collect()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn cross_subject_holds_out_test_subjects() {
        let mut samples = Vec::new();
        for s in 0..10 {
            samples.extend(drive(&format!("d{s}"), &format!("s{s}"), 200, 1.0));
        }
        let train: Vec<String> = (0..7).map(|s| format!("s{s}")).collect();
        let test: Vec<String> = (7..10).map(|s| format!("s{s}")).collect();
        let out = split_cross_subject(
            &samples,
            &train.iter().cloned().collect(),
            &test.iter().cloned().collect(),
            &CarveConfig { fraction: 0.05, time_gap_s: 10.0 },
        )
        .unwrap();
        let test_subjects = DatasetSplit::subjects(&out.split.test);
        assert_eq!(test_subjects, set(&["s7", "s8", "s9"]));
        assert_eq!(out.split.test.len(), 600);
        assert_eq!(out.split.validation.len(), 70);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn cross_subject_rejects_overlap_and_unassigned() {
        let samples = drive("d0", "s0", 10, 1.0);
        let err = split_cross_subject(&samples, &set(&["s0"]), &set(&["s0"]), &CarveConfig::default());
        assert_eq!(err.unwrap_err(), DatasetError::OverlappingSubjects("s0".into()));
        let err = split_cross_subject(&samples, &set(&["s1"]), &set(&["s2"]), &CarveConfig::default());
        assert_eq!(err.unwrap_err(), DatasetError::UnassignedSubject("s0".into()));
    }

    #[test]
    fn single_subject_in_test_warns() {
        let samples = drive("d0", "s0", 10, 1.0);
        let out = split_cross_subject(&samples, &set(&[]), &set(&["s0"]), &CarveConfig::default()).unwrap();
        assert!(out.split.train.is_empty());
        assert_eq!(out.split.test.len(), 10);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn temporal_split_counts() {
        let samples = drive("d0", "s0", 100, 0.5);
        let split = split_temporal(&samples, &TemporalFractions::default()).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (70, 15, 15));
        assert_eq!(split.train.last().unwrap().timestamp, 34.5);
        assert_eq!(split.validation[0].timestamp, 35.0);
    }

    #[test]
    fn temporal_split_rejects_bad_fractions() {
        let samples = drive("d0", "s0", 10, 1.0);
        let bad = TemporalFractions { train: 0.5, validation: 0.5, test: 0.1 };
        assert!(matches!(split_temporal(&samples, &bad), Err(DatasetError::BadFractions(_))));
    }

    #[test]
    fn temporal_split_is_per_drive() {
        // Drive a: 20 frames at 0..19 s; drive b: 40 frames at 100..139 s.
        let mut samples = drive("a", "s0", 20, 1.0);
        samples.extend(drive("b", "s1", 40, 1.0).into_iter().map(|mut s| {
            s.timestamp += 100.0;
            s
        }));
        let split = split_temporal(&samples, &TemporalFractions::default()).unwrap();
        let count = |part: &[LabeledSample], d: &str| part.iter().filter(|s| s.drive_id == d).count();
        assert_eq!((count(&split.train, "a"), count(&split.validation, "a"), count(&split.test, "a")), (14, 3, 3));
        assert_eq!((count(&split.train, "b"), count(&split.validation, "b"), count(&split.test, "b")), (28, 6, 6));
    }

    #[test]
    fn temporal_boundaries_respect_timestamp_ties() {
        let mut samples = drive("a", "s", 10, 1.0);
        for s in &mut samples {
            s.timestamp = libm::floor(s.timestamp / 2.0);
        }
        let split = split_temporal(&samples, &TemporalFractions::default()).unwrap();
        split.check_invariants().unwrap();
        assert_eq!(split.train.len(), 8);
    }

    #[test]
    fn carve_thousand_frames() {
        let samples = drive("d", "s", 1000, 1.0);
        let carved = carve_validation(samples, &CarveConfig { fraction: 0.05, time_gap_s: 30.0 }).unwrap();
        assert_eq!(carved.validation.len(), 50);
        assert_eq!(carved.discarded.len(), 29);
        let first_val = carved.validation.iter().map(|s| s.timestamp).fold(f64::INFINITY, f64::min);
        let last_train = carved.train.iter().map(|s| s.timestamp).fold(f64::NEG_INFINITY, f64::max);
        assert!(first_val - last_train >= 30.0);
    }

    #[test]
    fn carve_zero_fraction_is_identity() {
        let samples = drive("d", "s", 30, 1.0);
        let carved = carve_validation(samples.clone(), &CarveConfig { fraction: 0.0, time_gap_s: 30.0 }).unwrap();
        assert_eq!(carved.train, samples);
        assert!(carved.validation.is_empty());
    }

    #[test]
    fn carve_fails_loudly_on_short_drive() {
        let samples = drive("short", "s", 40, 0.033);
        let err = carve_validation(samples, &CarveConfig { fraction: 0.05, time_gap_s: 30.0 }).unwrap_err();
        assert_eq!(err, DatasetError::InfeasibleGap { drive_id: "short".into(), time_gap_s: 30.0 });
    }

    #[test]
    fn adjacent_frames_never_straddle_boundary() {
        // Three events of 0.03 s frames separated by 20 s pauses. For every
        // requested fraction, check all (train, validation) pairs directly.
        let mut samples = Vec::new();
        let mut t = 0.0;
        for (e, zone) in [GazeZone::Forward, GazeZone::Left, GazeZone::Right].into_iter().enumerate() {
            for i in 0..40 {
                samples.push(LabeledSample::new(format!("e{e}/{i}"), "s", "d", t, zone).unwrap());
                t += 0.03;
            }
            t += 20.0;
        }
        for pct in 1..60 {
            let cfg = CarveConfig { fraction: pct as f64 / 100.0, time_gap_s: 10.0 };
            let Ok(carved) = carve_validation(samples.clone(), &cfg) else { continue };
            for v in &carved.validation {
                for tr in &carved.train {
                    assert!((v.timestamp - tr.timestamp).abs() >= 10.0, "fraction {pct}%");
                }
            }
            assert_eq!(carved.validation.len() + carved.train.len() + carved.discarded.len(), 120);
        }
    }

    #[test]
    fn invariant_check_catches_leaks() {
        let a = drive("d", "s", 4, 1.0);
        let split = DatasetSplit { kind: SplitKind::CrossSubject, train: a.clone(), validation: vec![], test: a[..1].to_vec() };
        assert!(split.check_invariants().is_err());
        let split = DatasetSplit { kind: SplitKind::Temporal, train: vec![a[2].clone()], validation: vec![a[1].clone()], test: vec![] };
        assert!(split.check_invariants().is_err());
    }
}
