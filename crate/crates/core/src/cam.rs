//! Class activation maps of conv_gap models and heatmap overlays.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{resize_map, RgbImage};
use crate::models::{GazeModel, HeadKind, ModelError};
use crate::nn::Tensor;
use crate::zone::{argmax_zone, GazeZone, ZoneDistribution, ZONE_COUNT};

/// The seven class maps feeding global average pooling, with the pass they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamStack {
    pub width: usize,
    pub height: usize,
    /// One row-major `height * width` map per zone, in zone order.
    pub maps: Vec<Vec<f32>>,
    pub logits: [f32; ZONE_COUNT],
    pub distribution: ZoneDistribution,
    pub predicted: GazeZone,
    pub source: Option<alloc::string::String>,
}

impl CamStack {
    pub fn map(&self, zone: GazeZone) -> &[f32] {
        &self.maps[zone.ordinal()]
    }

    /// Spatial mean of every map, accumulated in f64.
    pub fn map_means(&self) -> [f64; ZONE_COUNT] {
        let mut out = [0.0; ZONE_COUNT];
        for (o, m) in out.iter_mut().zip(&self.maps) {
            *o = m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64;
        }
        out
    }

    /// Largest relative gap between a map mean and its logit.
    pub fn gap_identity_error(&self) -> f64 {
        self.map_means()
            .iter()
            .zip(&self.logits)
            .map(|(&mean, &logit)| {
                let scale = mean.abs().max((logit as f64).abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (mean - logit as f64).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Runs `model` on `input` and returns its class maps.
pub fn extract_cams(model: &GazeModel, input: &Tensor) -> Result<CamStack, ModelError> {
    if model.spec().head_kind() != HeadKind::ConvGap {
        return Err(ModelError::NotConvGap { family: model.spec().family });
    }
    let p = model.forward(input)?;
    let [c, h, w] = p.feature_maps.shape();
    debug_assert_eq!(c, ZONE_COUNT);
    let maps = (0..c).map(|k| p.feature_maps.channel(k).to_vec()).collect();
    Ok(CamStack {
        width: w,
        height: h,
        maps,
        logits: p.logits,
        predicted: argmax_zone(&p.distribution),
        distribution: p.distribution,
        source: None,
    })
}

/// Min-max normalizes to [0, 1]; a constant map becomes uniformly 0.5.
pub fn normalize_map(map: &[f32]) -> Vec<f32> {
    let (lo, hi) = map.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return alloc::vec![0.5; map.len()];
    }
    map.iter().map(|&v| (v - lo) / range).collect()
}

/// Normalized map bilinearly upsampled to `out_w` x `out_h`.
pub fn upsample_normalized(map: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    resize_map(&normalize_map(map), w, h, out_w, out_h)
}

/// Piecewise-linear jet colormap for `t` in [0, 1].
pub fn jet(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let channel = |centre: f32| (1.5 - (4.0 * t - centre).abs()).clamp(0.0, 1.0);
    [channel(3.0), channel(2.0), channel(1.0)].map(|v| libm::roundf(v * 255.0) as u8)
}

/// Blend weight of the heatmap over the source image.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Heatmap of one class map blended over `source` resized to `out_w` x `out_h`.
pub fn render_overlay(map: &[f32], w: usize, h: usize, source: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    assert!(!map.is_empty() && map.len() == w * h, "map must be a nonempty {w}x{h} grid");
    let heat = upsample_normalized(map, w, h, out_w as usize, out_h as usize);
    let whole = crate::geometry::BBox { x: 0, y: 0, w: source.width() as i64, h: source.height() as i64 };
    let base = source.resize_region(whole, out_w, out_h);
    let mut out = RgbImage::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let colour = jet(heat[(y * out_w + x) as usize]);
            let under = base.get(x, y);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = OVERLAY_ALPHA * colour[c] as f32 + (1.0 - OVERLAY_ALPHA) * under[c] as f32;
                px[c] = libm::roundf(v).clamp(0.0, 255.0) as u8;
            }
            out.put(x, y, px);
        }
    }
    out
}

/// Pixels at or above the 90th percentile of `values`.
pub fn top_decile_mask(values: &[f32]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let keep = (values.len() + 9) / 10;
    let cut = sorted[values.len() - keep];
    values.iter().map(|&v| v >= cut).collect()
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU a hotspot must reach against the reference mask to count as a hit.
pub const HOTSPOT_IOU_THRESHOLD: f64 = 0.2;

/// IoU between the top-decile hotspot of `map` upsampled to the mask size
/// and `mask` (row-major, `mask_w * mask_h`).
pub fn hotspot_iou(map: &[f32], w: usize, h: usize, mask: &[bool], mask_w: usize, mask_h: usize) -> f64 {
    let up = upsample_normalized(map, w, h, mask_w, mask_h);
    iou(&top_decile_mask(&up), mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_variable_resolution, stand_in_model, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(3, size, size, (0..3 * size * size).map(|_| rng.random_range(-100.0..100.0)).collect())
    }

    #[test]
    fn map_means_reproduce_logits() {
        let model = stand_in_model(Family::SqueezeNet, 8, 11).unwrap();
        let cams = extract_cams(&model, &random_input(224, 3)).unwrap();
        assert_eq!((cams.width, cams.height, cams.maps.len()), (13, 13, 7));
        assert!(cams.gap_identity_error() < 1e-4, "{}", cams.gap_identity_error());
        assert_eq!(cams.predicted, argmax_zone(&cams.distribution));
    }

    #[test]
    fn fully_connected_models_have_no_cams() {
        let model = stand_in_model(Family::Vgg16, 16, 1).unwrap();
        assert!(matches!(
            extract_cams(&model, &random_input(224, 1)),
            Err(ModelError::NotConvGap { family: Family::Vgg16 })
        ));
    }

    #[test]
    fn variable_resolution_maps_grow_with_input() {
        let model = make_variable_resolution(stand_in_model(Family::SqueezeNet, 16, 2).unwrap()).unwrap();
        let cams = extract_cams(&model, &random_input(448, 4)).unwrap();
        assert_eq!((cams.width, cams.height), (27, 27));
        assert!(cams.gap_identity_error() < 1e-4);
    }

    #[test]
    fn constant_map_renders_uniformly() {
        assert!(normalize_map(&[3.0; 9]).iter().all(|&v| v == 0.5));
        let src = RgbImage::filled(10, 10, [40, 80, 120]);
        let out = render_overlay(&[2.0; 4], 2, 2, &src, 20, 20);
        let first = out.get(0, 0);
        assert!((0..20).all(|y| (0..20).all(|x| out.get(x, y) == first)));
        let mid = jet(0.5);
        for c in 0..3 {
            assert_eq!(first[c], libm::roundf(0.5 * mid[c] as f32 + 0.5 * src.get(0, 0)[c] as f32) as u8);
        }
    }

    #[test]
    fn delta_map_hotspot_lands_on_the_matching_block() {
        let mut map = [0.0f32; 25];
        map[1 * 5 + 3] = 1.0;
        let up = upsample_normalized(&map, 5, 5, 50, 50);
        let (mut best, mut at) = (f32::MIN, 0);
        for (i, &v) in up.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        let (x, y) = (at % 50, at / 50);
        assert!((30..40).contains(&x) && (10..20).contains(&y), "({x},{y})");
        let mask: Vec<bool> = (0..2500).map(|i| (30..40).contains(&(i % 50)) && (10..20).contains(&(i / 50))).collect();
        assert!(hotspot_iou(&map, 5, 5, &mask, 50, 50) > 0.3);
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }

    #[test]
    fn upsample_then_normalize_matches_normalize_then_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let map: Vec<f32> = (0..36).map(|_| rng.random_range(-5.0..5.0)).collect();
            // An odd integer factor samples every source centre, so the
            // extremes survive upsampling and both orders agree exactly.
            let a = normalize_map(&resize_map(&map, 6, 6, 18, 18));
            let b = upsample_normalized(&map, 6, 6, 18, 18);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-5);
            }
            // Other factors only differ by how far the sampled extremes
            // fall short of the true ones.
            let a = normalize_map(&resize_map(&map, 6, 6, 48, 48));
            let b = upsample_normalized(&map, 6, 6, 48, 48);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 0.15);
            }
        }
    }

    #[test]
    fn top_decile_keeps_a_tenth() {
        let v: Vec<f32> = (0..100).map(|i| i as f32).collect();
        assert_eq!(top_decile_mask(&v).iter().filter(|&&b| b).count(), 10);
        assert_eq!(iou(&[true, true, false], &[true, false, false]), 0.5);
    }
}
