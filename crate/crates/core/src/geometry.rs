//! Pixel and fractional rectangles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("box {w}x{h} has non-positive size")]
    EmptyBox { w: i64, h: i64 },
    #[error("fractional rectangle ({x}, {y}, {w}, {h}) is not inside the unit square with positive area")]
    BadFraction { x: f64, y: f64, w: f64, h: f64 },
    #[error("fractional point ({x}, {y}) is not inside the unit square")]
    BadPoint { x: f64, y: f64 },
}

/// Frame dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

impl FrameSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// Axis-aligned pixel rectangle, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self, GeometryError> {
        if w <= 0 || h <= 0 {
            return Err(GeometryError::EmptyBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x && self.y <= other.y && self.right() >= other.right() && self.bottom() >= other.bottom()
    }

    pub fn within(&self, frame: FrameSize) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= frame.width as i64 && self.bottom() <= frame.height as i64
    }

    /// Moves the box inside the frame, shrinking a side only when it is larger
    /// than the frame itself. Size is preserved whenever it fits.
    pub fn clamp_into(&self, frame: FrameSize) -> BBox {
        let (fw, fh) = (frame.width as i64, frame.height as i64);
        let w = self.w.min(fw).max(1);
        let h = self.h.min(fh).max(1);
        BBox {
            x: self.x.clamp(0, (fw - w).max(0)),
            y: self.y.clamp(0, (fh - h).max(0)),
            w,
            h,
        }
    }
}

/// Rectangle in frame-relative coordinates, all components in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FracRect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let r = Self { x, y, w, h };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        const SLACK: f64 = 1e-9;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = unit(self.x)
            && unit(self.y)
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + SLACK
            && self.y + self.h <= 1.0 + SLACK;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::BadFraction { x: self.x, y: self.y, w: self.w, h: self.h })
        }
    }

    /// Scales to pixels, rounding half-up, at least one pixel per side.
    pub fn to_pixels(&self, frame: FrameSize) -> BBox {
        let (fw, fh) = (frame.width as f64, frame.height as f64);
        let x = round_half_up(self.x * fw);
        let y = round_half_up(self.y * fh);
        let w = round_half_up(self.w * fw).max(1);
        let h = round_half_up(self.h * fh).max(1);
        BBox { x, y, w, h }.clamp_into(frame)
    }
}

/// Point in frame-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracPoint {
    pub x: f64,
    pub y: f64,
}

impl FracPoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::BadPoint { x, y })
        }
    }
}

pub(crate) fn round_half_up(v: f64) -> i64 {
    libm::floor(v + 0.5) as i64
}
