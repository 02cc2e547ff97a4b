//! Minimal owned RGB8 raster plus bilinear resampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{BBox, FrameSize};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    /// Wraps raw interleaved bytes; `None` if the length does not match.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> FrameSize {
        FrameSize::new(self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Paints the intersection of `rect` with the image.
    pub fn fill_rect(&mut self, rect: BBox, rgb: [u8; 3]) {
        let x0 = rect.x.max(0) as u32;
        let y0 = rect.y.max(0) as u32;
        let x1 = (rect.right().max(0) as u32).min(self.width);
        let y1 = (rect.bottom().max(0) as u32).min(self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.put(x, y, rgb);
            }
        }
    }

    /// Bilinearly resamples the `rect` region to `out_w` x `out_h`, returning
    /// planar float channels `[3][out_h][out_w]` in the 0..=255 range.
    pub fn resample_planar(&self, rect: BBox, out_w: usize, out_h: usize) -> Vec<f32> {
        let plane = out_w * out_h;
        let mut out = vec![0.0f32; plane * 3];
        let xs = axis_taps(rect.x, rect.w, out_w, self.width);
        let ys = axis_taps(rect.y, rect.h, out_h, self.height);
        let stride = self.width as usize * 3;
        for (oy, ty) in ys.iter().enumerate() {
            for (ox, tx) in xs.iter().enumerate() {
                for c in 0..3 {
                    let at = |x: usize, y: usize| self.data[y * stride + x * 3 + c] as f32;
                    let top = lerp(at(tx.lo, ty.lo), at(tx.hi, ty.lo), tx.frac);
                    let bottom = lerp(at(tx.lo, ty.hi), at(tx.hi, ty.hi), tx.frac);
                    out[c * plane + oy * out_w + ox] = lerp(top, bottom, ty.frac);
                }
            }
        }
        out
    }

    /// Copies the `rect` region resized to `out_w` x `out_h`.
    pub fn resize_region(&self, rect: BBox, out_w: u32, out_h: u32) -> RgbImage {
        let planar = self.resample_planar(rect, out_w as usize, out_h as usize);
        let plane = out_w as usize * out_h as usize;
        let mut out = RgbImage::new(out_w, out_h);
        for i in 0..plane {
            for c in 0..3 {
                out.data[i * 3 + c] = libm::roundf(planar[c * plane + i]).clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

/// Half-pixel-centre sampling positions of `out` samples spanning
/// `[start, start + len)` in a source axis of `limit` pixels.
fn axis_taps(start: i64, len: i64, out: usize, limit: u32) -> Vec<Tap> {
    let scale = len as f64 / out as f64;
    let max = limit as i64 - 1;
    (0..out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let src = src.clamp(0.0, (len - 1) as f64);
            let base = libm::floor(src);
            let frac = (src - base) as f32;
            let lo = (start + base as i64).clamp(0, max) as usize;
            let hi = (start + base as i64 + 1).min(start + len - 1).clamp(0, max) as usize;
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Bilinear upsampling of a single-channel map with half-pixel centres.
pub fn resize_map(map: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let mut out = vec![0.0; out_w * out_h];
    let taps = |n: usize, out: usize| -> Vec<Tap> {
        let scale = n as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let base = libm::floor(src);
                let lo = base as usize;
                Tap { lo, hi: (lo + 1).min(n - 1), frac: (src - base) as f32 }
            })
            .collect()
    };
    let xs = taps(w, out_w);
    let ys = taps(h, out_h);
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let at = |x: usize, y: usize| map[y * w + x];
            let top = lerp(at(tx.lo, ty.lo), at(tx.hi, ty.lo), tx.frac);
            let bottom = lerp(at(tx.lo, ty.hi), at(tx.hi, ty.hi), tx.frac);
            out[oy * out_w + ox] = lerp(top, bottom, ty.frac);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample_preserves_pixels() {
        let mut img = RgbImage::new(4, 3);
        for y in 0..3 {
            for x in 0..4 {
                img.put(x, y, [(x * 10) as u8, (y * 20) as u8, 7]);
            }
        }
        let rect = BBox { x: 0, y: 0, w: 4, h: 3 };
        assert_eq!(img.resize_region(rect, 4, 3), img);
    }

    #[test]
    fn resample_stays_inside_rect() {
        // Left half black, right half white: sampling only the left half must stay black.
        let mut img = RgbImage::filled(8, 8, [0, 0, 0]);
        img.fill_rect(BBox { x: 4, y: 0, w: 4, h: 8 }, [255, 255, 255]);
        let out = img.resample_planar(BBox { x: 0, y: 0, w: 4, h: 8 }, 9, 9);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_map_odd_factor_hits_centres() {
        let map = [1.0, 2.0, 3.0, 4.0];
        let up = resize_map(&map, 2, 2, 6, 6);
        assert_eq!(up[6 + 1], 1.0);
        assert_eq!(up[4 * 6 + 4], 4.0);
    }
}
