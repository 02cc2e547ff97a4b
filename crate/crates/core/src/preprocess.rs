//! Crop strategies and network input preparation.
//!
//! A frame goes through three steps before it reaches a network:
//!
//! 1. [`detect_driver_face`] picks the driver's face among the detections of
//!    an injected [`FaceDetector`] (skipped for [`CropStrategy::FaceEmbeddedFov`]).
//! 2. [`resolve_crop`] turns the strategy and face box into a pixel rectangle
//!    that always lies inside the frame.
//! 3. [`normalize`] resamples that rectangle to the network resolution and
//!    centres it with per-channel means.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{round_half_up, BBox, FracPoint, FracRect, FrameSize, GeometryError};
use crate::image::RgbImage;
use crate::nn::Tensor;

/// Mean RGB pixel values of the ImageNet training set (0..=255 scale).
pub const IMAGENET_MEAN_RGB: [f32; 3] = [123.68, 116.779, 103.939];

/// Default context margin per side, as a fraction of the face size.
pub const DEFAULT_CONTEXT_EXPAND: f64 = 0.5;

/// Network input resolutions this toolkit prepares.
pub const SUPPORTED_RESOLUTIONS: [u32; 4] = [224, 227, 448, 625];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    HalfFace,
    Face,
    FaceContext,
    FaceEmbeddedFov,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::HalfFace, StrategyKind::Face, StrategyKind::FaceContext, StrategyKind::FaceEmbeddedFov];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::HalfFace => "half-face",
            StrategyKind::Face => "face",
            StrategyKind::FaceContext => "face-context",
            StrategyKind::FaceEmbeddedFov => "face-fov",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn needs_face(self) -> bool {
        self != StrategyKind::FaceEmbeddedFov
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Region-selection rule for network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CropStrategy {
    /// Top half of the face box.
    HalfFace,
    Face,
    /// Face box grown by `expand` times its width/height on every side.
    FaceContext { expand: f64 },
    /// Fixed cabin region guaranteed to contain the driver's head.
    FaceEmbeddedFov { fov: FracRect },
}

impl CropStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            CropStrategy::HalfFace => StrategyKind::HalfFace,
            CropStrategy::Face => StrategyKind::Face,
            CropStrategy::FaceContext { .. } => StrategyKind::FaceContext,
            CropStrategy::FaceEmbeddedFov { .. } => StrategyKind::FaceEmbeddedFov,
        }
    }

    /// Builds a strategy, taking the FoV rectangle from `profile`.
    pub fn from_kind(kind: StrategyKind, profile: &CameraProfile) -> CropStrategy {
        match kind {
            StrategyKind::HalfFace => CropStrategy::HalfFace,
            StrategyKind::Face => CropStrategy::Face,
            StrategyKind::FaceContext => CropStrategy::FaceContext { expand: DEFAULT_CONTEXT_EXPAND },
            StrategyKind::FaceEmbeddedFov => CropStrategy::FaceEmbeddedFov { fov: profile.fov_rect },
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        match self {
            CropStrategy::FaceContext { expand } if !(expand.is_finite() && *expand >= 0.0) => {
                Err(PreprocessError::BadExpand(*expand))
            }
            CropStrategy::FaceEmbeddedFov { fov } => Ok(fov.validate()?),
            _ => Ok(()),
        }
    }
}

/// Per-camera calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub profile_id: String,
    pub frame_size: FrameSize,
    pub fov_rect: FracRect,
    /// Where the driver's face is expected; picks the driver among several faces.
    pub driver_side_anchor: FracPoint,
}

impl CameraProfile {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        self.fov_rect.validate()?;
        FracPoint::new(self.driver_side_anchor.x, self.driver_side_anchor.y)?;
        Ok(())
    }
}

/// A face hypothesis from a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f32,
}

/// Pluggable face detector.
pub trait FaceDetector {
    fn detect(&self, frame_ref: &str, frame: &RgbImage) -> Result<Vec<Detection>, DetectorError>;

    /// Whether concurrent `detect` calls are allowed. Callers that fan out
    /// across threads must serialize detectors that return `false`.
    fn share_safe(&self) -> bool {
        true
    }
}

impl<D: FaceDetector + ?Sized> FaceDetector for &D {
    fn detect(&self, frame_ref: &str, frame: &RgbImage) -> Result<Vec<Detection>, DetectorError> {
        (**self).detect(frame_ref, frame)
    }

    fn share_safe(&self) -> bool {
        (**self).share_safe()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("face detector failed: {0}")]
pub struct DetectorError(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("no face detected in `{0}`")]
    NoFace(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("strategy {0} needs a face box")]
    MissingFace(StrategyKind),
    #[error("context expansion {0} must be a non-negative number")]
    BadExpand(f64),
    #[error("crop rectangle {0:?} is empty after clamping to the frame")]
    DegenerateRect(BBox),
    #[error("target resolution {0} must be positive")]
    BadResolution(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Picks the detection whose centre is closest to the profile's driver anchor.
///
/// Ties go to the higher score, then to the earlier detection.
pub fn detect_driver_face<D: FaceDetector + ?Sized>(
    frame_ref: &str,
    frame: &RgbImage,
    profile: &CameraProfile,
    detector: &D,
) -> Result<BBox, PreprocessError> {
    let detections = detector.detect(frame_ref, frame)?;
    let anchor = (
        profile.driver_side_anchor.x * frame.width() as f64,
        profile.driver_side_anchor.y * frame.height() as f64,
    );
    pick_nearest(&detections, anchor).ok_or_else(|| PreprocessError::NoFace(frame_ref.into()))
}

fn pick_nearest(detections: &[Detection], anchor: (f64, f64)) -> Option<BBox> {
    let dist = |d: &Detection| {
        let (cx, cy) = d.bbox.center();
        (cx - anchor.0) * (cx - anchor.0) + (cy - anchor.1) * (cy - anchor.1)
    };
    detections
        .iter()
        .filter(|d| d.bbox.w > 0 && d.bbox.h > 0)
        .min_by(|a, b| dist(a).total_cmp(&dist(b)).then(b.score.total_cmp(&a.score)))
        .map(|d| d.bbox)
}

/// Pixel rectangle of `strategy` inside a frame of `frame_size`.
///
/// Boxes that would leave the frame are shifted back inside and only shrunk
/// when larger than the frame.
pub fn resolve_crop(frame_size: FrameSize, face: Option<BBox>, strategy: &CropStrategy) -> Result<BBox, PreprocessError> {
    strategy.validate()?;
    if frame_size.width == 0 || frame_size.height == 0 {
        return Err(PreprocessError::DegenerateRect(BBox { x: 0, y: 0, w: 0, h: 0 }));
    }
    let face = match (strategy, face) {
        (CropStrategy::FaceEmbeddedFov { fov }, _) => return Ok(fov.to_pixels(frame_size)),
        (_, Some(face)) if face.w > 0 && face.h > 0 => face.clamp_into(frame_size),
        (_, Some(face)) => return Err(PreprocessError::DegenerateRect(face)),
        (s, None) => return Err(PreprocessError::MissingFace(s.kind())),
    };
    let rect = match strategy {
        CropStrategy::Face => face,
        CropStrategy::HalfFace => BBox { h: (face.h / 2).max(1), ..face },
        CropStrategy::FaceContext { expand } => {
            let dx = round_half_up(expand * face.w as f64);
            let dy = round_half_up(expand * face.h as f64);
            BBox { x: face.x - dx, y: face.y - dy, w: face.w + 2 * dx, h: face.h + 2 * dy }.clamp_into(frame_size)
        }
        CropStrategy::FaceEmbeddedFov { .. } => unreachable!(),
    };
    Ok(rect)
}

/// Intensity normalization applied after resampling: `(pixel - mean) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub channel_means: [f32; 3],
    pub scale: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { channel_means: IMAGENET_MEAN_RGB, scale: 1.0 }
    }
}

/// A prepared, mean-centred network input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub pixels: Tensor,
    pub source: BBox,
    pub strategy: StrategyKind,
}

impl NetworkInput {
    pub fn resolution(&self) -> (usize, usize) {
        (self.pixels.height(), self.pixels.width())
    }
}

/// Crops `rect`, bilinearly resizes it to `target` x `target` and subtracts
/// the channel means. Deterministic for identical inputs.
pub fn normalize(
    frame: &RgbImage,
    rect: BBox,
    target: u32,
    norm: &Normalization,
    strategy: StrategyKind,
) -> Result<NetworkInput, PreprocessError> {
    if target == 0 {
        return Err(PreprocessError::BadResolution(target));
    }
    let size = frame.size();
    let x0 = rect.x.max(0);
    let y0 = rect.y.max(0);
    let x1 = rect.right().min(size.width as i64);
    let y1 = rect.bottom().min(size.height as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(PreprocessError::DegenerateRect(rect));
    }
    let clipped = BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
    let t = target as usize;
    let mut data = frame.resample_planar(clipped, t, t);
    let plane = t * t;
    for (c, chunk) in data.chunks_exact_mut(plane).enumerate() {
        let mean = norm.channel_means[c];
        for v in chunk {
            *v = (*v - mean) * norm.scale;
        }
    }
    Ok(NetworkInput { pixels: Tensor::from_vec(3, t, t, data), source: clipped, strategy })
}

/// Everything needed to turn a frame into a [`NetworkInput`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub profile: CameraProfile,
    pub strategy: CropStrategy,
    pub resolution: u32,
    pub normalization: Normalization,
}

impl Preprocessor {
    pub fn prepare<D: FaceDetector + ?Sized>(
        &self,
        frame_ref: &str,
        frame: &RgbImage,
        detector: &D,
    ) -> Result<NetworkInput, PreprocessError> {
        let face = if self.strategy.kind().needs_face() {
            Some(detect_driver_face(frame_ref, frame, &self.profile, detector)?)
        } else {
            None
        };
        let rect = resolve_crop(frame.size(), face, &self.strategy)?;
        normalize(frame, rect, self.resolution, &self.normalization, self.strategy.kind())
    }
}
