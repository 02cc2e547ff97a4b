//! Per-zone subsampling that spreads the retained frames over many events.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, LabeledSample};
use crate::zone::GazeZone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Upper bound on retained frames per zone.
    pub cap_per_zone: usize,
    /// Frames taken from one event per round-robin pass.
    pub per_event_cap: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self { cap_per_zone: 3500, per_event_cap: 1, seed: 0 }
    }
}

/// Caps every zone at `cap_per_zone` frames.
///
/// Zones already under the cap are kept whole. Otherwise events of that zone
/// are visited round-robin in a seeded random order, each pass taking at most
/// `per_event_cap` randomly chosen frames from every event that still has
/// some, until the cap is reached. Output keeps the input order of `events`.
pub fn balance(events: &[Event], config: &BalanceConfig) -> Vec<LabeledSample> {
    let per_event_cap = config.per_event_cap.max(1);
    let mut keep: Vec<Vec<bool>> = events.iter().map(|e| alloc::vec![false; e.samples.len()]).collect();

    for zone in GazeZone::ALL {
        let members: Vec<usize> = (0..events.len()).filter(|&i| events[i].zone == zone).collect();
        let total: usize = members.iter().map(|&i| events[i].samples.len()).sum();
        if total <= config.cap_per_zone {
            for &i in &members {
                keep[i].iter_mut().for_each(|k| *k = true);
            }
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(zone_seed(config.seed, zone));
        let mut order = members;
        order.shuffle(&mut rng);
        // Remaining frame indices of each event, in random draw order.
        let mut pools: Vec<Vec<usize>> = order
            .iter()
            .map(|&i| {
                let mut idx: Vec<usize> = (0..events[i].samples.len()).collect();
                idx.shuffle(&mut rng);
                idx
            })
            .collect();
        let mut taken = 0;
        while taken < config.cap_per_zone {
            let mut progressed = false;
            for (slot, &event) in order.iter().enumerate() {
                for _ in 0..per_event_cap {
                    if taken == config.cap_per_zone {
                        break;
                    }
                    let Some(frame) = pools[slot].pop() else { break };
                    keep[event][frame] = true;
                    taken += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    events
        .iter()
        .zip(&keep)
        .flat_map(|(e, k)| e.samples.iter().zip(k).filter(|(_, &k)| k).map(|(s, _)| s.clone()))
        .collect()
}

fn zone_seed(seed: u64, zone: GazeZone) -> u64 {
    seed ^ ((zone.ordinal() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
