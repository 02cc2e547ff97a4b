//! The seven in-cabin gaze zones and classifier output distributions.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of gaze zones.
pub const ZONE_COUNT: usize = 7;

/// A discrete region of the cabin the driver is looking at.
///
/// The ordinal order is fixed and matches the row order of every confusion
/// matrix this crate produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GazeZone {
    Forward,
    Right,
    Left,
    CenterStack,
    RearviewMirror,
    Speedometer,
    EyesClosed,
}

impl GazeZone {
    pub const ALL: [GazeZone; ZONE_COUNT] = [
        GazeZone::Forward,
        GazeZone::Right,
        GazeZone::Left,
        GazeZone::CenterStack,
        GazeZone::RearviewMirror,
        GazeZone::Speedometer,
        GazeZone::EyesClosed,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<GazeZone> {
        Self::ALL.get(ordinal).copied()
    }

    /// Canonical name as written in manifests and reports.
    pub fn name(self) -> &'static str {
        match self {
            GazeZone::Forward => "Forward",
            GazeZone::Right => "Right",
            GazeZone::Left => "Left",
            GazeZone::CenterStack => "CenterStack",
            GazeZone::RearviewMirror => "RearviewMirror",
            GazeZone::Speedometer => "Speedometer",
            GazeZone::EyesClosed => "EyesClosed",
        }
    }
}

impl fmt::Display for GazeZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown gaze zone label `{0}`")]
pub struct UnknownZone(pub alloc::string::String);

impl FromStr for GazeZone {
    type Err = UnknownZone;

    /// Accepts the canonical names, ignoring ASCII case, spaces and underscores
    /// (so `Center Stack` and `center_stack` both parse).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squash = |name: &str| {
            name.chars()
                .filter(|c| *c != ' ' && *c != '_')
                .map(|c| c.to_ascii_lowercase())
                .collect::<alloc::string::String>()
        };
        let wanted = squash(s.trim());
        GazeZone::ALL
            .iter()
            .copied()
            .find(|z| squash(z.name()) == wanted)
            .ok_or_else(|| UnknownZone(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DistributionError {
    #[error("probability {value} at index {index} is negative or not finite")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
}

/// Tolerance on the sum of a [`ZoneDistribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// A probability distribution over the seven zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneDistribution {
    probs: [f64; ZONE_COUNT],
}

impl ZoneDistribution {
    pub fn new(probs: [f64; ZONE_COUNT]) -> Result<Self, DistributionError> {
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DistributionError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self { probs: [1.0 / ZONE_COUNT as f64; ZONE_COUNT] }
    }

    pub fn point_mass(zone: GazeZone) -> Self {
        let mut probs = [0.0; ZONE_COUNT];
        probs[zone.ordinal()] = 1.0;
        Self { probs }
    }

    /// Numerically stable softmax of raw class scores.
    pub fn from_logits(logits: &[f32; ZONE_COUNT]) -> Self {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64));
        let mut probs = [0.0; ZONE_COUNT];
        let mut total = 0.0;
        for (p, &l) in probs.iter_mut().zip(logits) {
            *p = libm::exp(l as f64 - max);
            total += *p;
        }
        for p in &mut probs {
            *p /= total;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &[f64; ZONE_COUNT] {
        &self.probs
    }

    pub fn prob(&self, zone: GazeZone) -> f64 {
        self.probs[zone.ordinal()]
    }
}

/// Most probable zone; ties go to the lowest ordinal.
pub fn argmax_zone(dist: &ZoneDistribution) -> GazeZone {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate().skip(1) {
        if p > dist.probs[best] {
            best = i;
        }
    }
    GazeZone::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_zone(&ZoneDistribution::point_mass(GazeZone::Forward)), GazeZone::Forward);
        assert_eq!(argmax_zone(&ZoneDistribution::uniform()), GazeZone::Forward);
        let d = ZoneDistribution::new([0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1]).unwrap();
        assert_eq!(argmax_zone(&d), GazeZone::CenterStack);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(matches!(
            ZoneDistribution::new([0.5; 7]),
            Err(DistributionError::NotNormalized { .. })
        ));
        assert!(matches!(
            ZoneDistribution::new([-0.1, 1.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(DistributionError::InvalidEntry { index: 0, .. })
        ));
    }

    #[test]
    fn names_round_trip() {
        for zone in GazeZone::ALL {
            let parsed: GazeZone = zone.name().parse().unwrap();
            assert_eq!(parsed, zone);
            assert_eq!(GazeZone::from_ordinal(zone.ordinal()), Some(zone));
            assert_eq!(zone.to_string(), zone.name());
        }
        assert_eq!("center stack".parse::<GazeZone>().unwrap(), GazeZone::CenterStack);
        assert!("Cellphone".parse::<GazeZone>().is_err());
        assert_eq!(GazeZone::from_ordinal(7), None);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = [0.3f32, -1.0, 2.0, 0.0, 0.5, 1.5, -0.25];
        let b = a.map(|l| l + 40.0);
        let (da, db) = (ZoneDistribution::from_logits(&a), ZoneDistribution::from_logits(&b));
        for (x, y) in da.probs().iter().zip(db.probs()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    fn arb_distribution() -> impl Strategy<Value = ZoneDistribution> {
        proptest::array::uniform7(0.0f64..1.0).prop_filter_map("nonzero mass", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-9).then(|| ZoneDistribution::new(raw.map(|p| p / total)).unwrap())
        })
    }

    proptest! {
        #[test]
        fn argmax_survives_monotone_transforms(dist in arb_distribution(), power in 0.2f64..4.0) {
            // p -> p^k + 0.01 is strictly increasing; renormalize afterwards.
            let raw = dist.probs().map(|p| libm::pow(p, power) + 0.01);
            let total: f64 = raw.iter().sum();
            let transformed = ZoneDistribution::new(raw.map(|p| p / total)).unwrap();
            let before = argmax_zone(&dist);
            let after = argmax_zone(&transformed);
            // Rounding can create or break exact ties; only compare clear winners.
            let second = dist.probs().iter().enumerate()
                .filter(|(i, _)| *i != before.ordinal())
                .fold(0.0f64, |m, (_, &p)| m.max(p));
            prop_assume!(dist.prob(before) - second > 1e-9);
            prop_assert_eq!(before, after);
        }
    }
}
