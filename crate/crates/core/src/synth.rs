//! Generated cabin frames with known face boxes and zone-specific eye
//! patterns, for desk-scale end-to-end runs.
//!
//! Every subject has its own skin, hair and background colours and one
//! drive. A frame shows the driver's face on the right and, in half of the
//! frames, a passenger's face on the left. Only the pupils inside the two
//! eye patches depend on the zone, so a classifier has to look at the eyes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledSample;
use crate::geometry::{BBox, FracPoint, FracRect, FrameSize};
use crate::image::RgbImage;
use crate::preprocess::{CameraProfile, Detection, DetectorError, FaceDetector};
use crate::zone::GazeZone;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    /// Frames of each zone per subject.
    pub frames_per_zone: usize,
    /// Consecutive frames forming one fixation event.
    pub frames_per_event: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Seconds between frames inside an event.
    pub frame_interval_s: f64,
    /// Seconds between the end of one event and the start of the next.
    pub event_gap_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 10,
            frames_per_zone: 24,
            frames_per_event: 6,
            frame_width: 160,
            frame_height: 120,
            frame_interval_s: 0.1,
            event_gap_s: 40.0,
            seed: 0,
        }
    }
}

/// A generated frame and its ground truth geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub sample: LabeledSample,
    pub image: RgbImage,
    pub driver_face: BBox,
    pub passenger_face: Option<BBox>,
    /// The driver's two eye patches in frame pixels.
    pub eyes: [BBox; 2],
}

#[derive(Debug, Clone, Copy)]
struct Look {
    skin: [u8; 3],
    hair: [u8; 3],
    background: [u8; 3],
    face_size: i64,
}

pub fn subject_id(index: usize) -> String {
    format!("s{index:02}")
}

/// Camera profile matching generated frames: the driver sits in the right
/// half, and the FoV rectangle covers it.
pub fn camera_profile(config: &SynthConfig) -> CameraProfile {
    CameraProfile {
        profile_id: String::from("synthetic"),
        frame_size: FrameSize::new(config.frame_width, config.frame_height),
        fov_rect: FracRect { x: 0.4, y: 0.0, w: 0.6, h: 1.0 },
        driver_side_anchor: FracPoint { x: 0.7, y: 0.45 },
    }
}

/// Pupil offset in units of the free travel inside an eye patch; `None`
/// means closed eyes.
fn pupil_offset(zone: GazeZone) -> Option<(i64, i64)> {
    match zone {
        GazeZone::Forward => Some((0, 0)),
        GazeZone::Right => Some((-1, 0)),
        GazeZone::Left => Some((1, 0)),
        GazeZone::CenterStack => Some((-1, 1)),
        GazeZone::RearviewMirror => Some((-1, -1)),
        GazeZone::Speedometer => Some((0, 1)),
        GazeZone::EyesClosed => None,
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amount: i32) -> [u8; 3] {
    c.map(|v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Draws a face of `size` at (`x`, `y`) and returns the two eye patches.
fn draw_face(img: &mut RgbImage, look: &Look, x: i64, y: i64, size: i64, zone: GazeZone, rng: &mut ChaCha8Rng) -> [BBox; 2] {
    img.fill_rect(BBox { x, y, w: size, h: size }, look.skin);
    img.fill_rect(BBox { x, y, w: size, h: size / 5 }, look.hair);
    let eye_w = size / 4;
    let eye_h = (size * 3 / 20).max(4);
    let eye_y = y + size * 3 / 10;
    let eyes = [
        BBox { x: x + size / 6, y: eye_y, w: eye_w, h: eye_h },
        BBox { x: x + size - size / 6 - eye_w, y: eye_y, w: eye_w, h: eye_h },
    ];
    let pupil = (eye_h * 3 / 5).max(2);
    let (px, py) = (rng.random_range(-1..=1i64), rng.random_range(-1..=1i64).min(0));
    for eye in eyes {
        match pupil_offset(zone) {
            Some((dx, dy)) => {
                img.fill_rect(eye, [235, 235, 230]);
                let travel_x = (eye.w - pupil) / 2;
                let travel_y = (eye.h - pupil) / 2;
                let cx = eye.x + travel_x + dx * travel_x + px.clamp(-travel_x / 3, travel_x / 3);
                let cy = eye.y + travel_y + dy * travel_y + py.clamp(-travel_y, 0);
                img.fill_rect(BBox { x: cx, y: cy, w: pupil, h: pupil }, [25, 20, 20]);
            }
            None => {
                // A shaded lid over the whole patch with a dark lash line, so
                // closed eyes are a pattern of their own and not just skin.
                let lid = look.skin.map(|v| (v as u16 * 3 / 5) as u8);
                img.fill_rect(eye, lid);
                img.fill_rect(BBox { x: eye.x, y: eye.y + eye.h / 2, w: eye.w, h: (eye.h / 4).max(2) }, [25, 20, 20]);
            }
        }
    }
    // Nose and mouth sit in the lower half, outside any half-face crop.
    img.fill_rect(BBox { x: x + size / 2 - size / 16, y: y + size / 2, w: size / 8, h: size / 5 }, look.hair);
    img.fill_rect(BBox { x: x + size / 3, y: y + size * 3 / 4, w: size / 3, h: (size / 16).max(2) }, [150, 60, 60]);
    eyes
}

/// Generates `config.subjects * 7 * config.frames_per_zone` frames.
///
/// Within a subject's drive, zones take turns in events of
/// `frames_per_event` frames separated by `event_gap_s`, so time-gapped
/// validation carving has whole events to take.
pub fn generate(config: &SynthConfig) -> Vec<SynthFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (fw, fh) = (config.frame_width as i64, config.frame_height as i64);
    let mut out = Vec::with_capacity(config.subjects * 7 * config.frames_per_zone);
    for s in 0..config.subjects {
        let look = Look {
            skin: [rng.random_range(150..235), rng.random_range(105..180), rng.random_range(80..150)],
            hair: [rng.random_range(10..110), rng.random_range(10..80), rng.random_range(10..60)],
            background: [rng.random_range(40..120), rng.random_range(40..120), rng.random_range(40..120)],
            face_size: rng.random_range(fh * 9 / 20..=fh * 11 / 20),
        };
        let subject = subject_id(s);
        let drive = format!("drive-{subject}");
        let per_event = config.frames_per_event.max(1);
        let events_per_zone = config.frames_per_zone.div_ceil(per_event);
        let mut t = 0.0;
        let mut frame_no = 0;
        for round in 0..events_per_zone {
            let mut order = GazeZone::ALL;
            order.shuffle(&mut rng);
            for zone in order {
                let n = per_event.min(config.frames_per_zone - round * per_event);
                for _ in 0..n {
                    let mut img = RgbImage::filled(config.frame_width, config.frame_height, look.background);
                    let size = look.face_size + rng.random_range(-3..=3);
                    let x = rng.random_range(fw / 2..=fw - size - 2);
                    let y = rng.random_range(2..=fh - size - 2);
                    let eyes = draw_face(&mut img, &look, x, y, size, zone, &mut rng);
                    let passenger_face = rng.random_bool(0.5).then(|| {
                        let ps = fh * 3 / 10;
                        let px = rng.random_range(2..=fw / 2 - ps - 2);
                        let py = rng.random_range(2..=fh - ps - 2);
                        let passenger = Look { face_size: ps, ..look };
                        let any = GazeZone::ALL[rng.random_range(0..GazeZone::ALL.len())];
                        draw_face(&mut img, &passenger, px, py, ps, any, &mut rng);
                        BBox { x: px, y: py, w: ps, h: ps }
                    });
                    add_noise(&mut img, &mut rng, 12);
                    let frame_ref = format!("{subject}/{frame_no:05}.png");
                    let sample = LabeledSample::new(frame_ref, subject.clone(), drive.clone(), t, zone)
                        .expect("generated identities are valid");
                    out.push(SynthFrame {
                        sample,
                        image: img,
                        driver_face: BBox { x, y, w: size, h: size },
                        passenger_face,
                        eyes,
                    });
                    frame_no += 1;
                    t += config.frame_interval_s;
                }
                t += config.event_gap_s;
            }
        }
    }
    out
}

fn add_noise(img: &mut RgbImage, rng: &mut ChaCha8Rng, amount: i32) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = jitter(rng, img.get(x, y), amount);
            img.put(x, y, px);
        }
    }
}

/// Row-major mask of `eyes` over a `crop` resampled to `out_w` x `out_h`,
/// using the same pixel-centre mapping as the resampler.
pub fn eye_mask(eyes: &[BBox], crop: BBox, out_w: usize, out_h: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let fy = crop.y as f64 + (oy as f64 + 0.5) * crop.h as f64 / out_h as f64;
        for ox in 0..out_w {
            let fx = crop.x as f64 + (ox as f64 + 0.5) * crop.w as f64 / out_w as f64;
            mask.push(eyes.iter().any(|e| {
                fx >= e.x as f64 && fx < e.right() as f64 && fy >= e.y as f64 && fy < e.bottom() as f64
            }));
        }
    }
    mask
}

/// Detector returning the known faces of generated frames.
#[derive(Debug, Clone, Default)]
pub struct KnownFaces {
    faces: BTreeMap<String, Vec<BBox>>,
}

impl KnownFaces {
    pub fn from_frames(frames: &[SynthFrame]) -> Self {
        let faces = frames
            .iter()
            .map(|f| (f.sample.frame_ref.clone(), f.passenger_face.into_iter().chain([f.driver_face]).collect()))
            .collect();
        Self { faces }
    }
}

impl FaceDetector for KnownFaces {
    fn detect(&self, frame_ref: &str, _frame: &RgbImage) -> Result<Vec<Detection>, DetectorError> {
        Ok(self
            .faces
            .get(frame_ref)
            .map(|boxes| boxes.iter().map(|&bbox| Detection { bbox, score: 1.0 }).collect())
            .unwrap_or_default())
    }
}
