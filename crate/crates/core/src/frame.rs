//! Image and region types shared by the tracker, the simulator and the gateway.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyFrame { width: usize, height: usize },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("bounding box ({x_min}, {y_min}, {x_max}, {y_max}) is degenerate")]
    DegenerateBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("bounding box does not intersect the {width}x{height} frame")]
    OutsideFrame { width: usize, height: usize },
}

/// `f64::floor` without the libm call the baseline x86-64 target falls back
/// to. Same value for every finite input that fits an `i64`.
#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    if x.abs() < 4.5e15 {
        let t = x as i64 as f64;
        if t > x {
            t - 1.0
        } else {
            t
        }
    } else {
        x.floor()
    }
}

/// A single-channel luminance image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pub seq: u64,
    pub ts_ms: u64,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, seq: u64, ts_ms: u64) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyFrame { width, height });
        }
        if pixels.len() != width * height {
            return Err(FrameError::BufferSize { expected: width * height, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels, seq, ts_ms })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, FrameError> {
        Self::new(width, height, vec![value; width * height], 0, 0)
    }

    /// Builds a frame from interleaved 8-bit RGB using Rec. 601 luma weights.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8], seq: u64, ts_ms: u64) -> Result<Self, FrameError> {
        if rgb.len() != width * height * 3 {
            return Err(FrameError::BufferSize { expected: width * height * 3, actual: rgb.len() });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| (0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32) / 255.0)
            .collect();
        Self::new(width, height, pixels, seq, ts_ms)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at continuous coordinates where pixel `(i, j)` has its
    /// center at `(i + 0.5, j + 0.5)`. Out-of-range lookups replicate the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = floor(fx);
        let y0 = floor(fy);
        let tx = fx - x0;
        let ty = fy - y0;
        let max_x = self.width as i64 - 1;
        let max_y = self.height as i64 - 1;
        let xi = |v: f64| (v as i64).clamp(0, max_x) as usize;
        let yi = |v: f64| (v as i64).clamp(0, max_y) as usize;
        let (xa, xb) = (xi(x0), xi(x0 + 1.0));
        let (ya, yb) = (yi(y0), yi(y0 + 1.0));
        let p00 = self.get(xa, ya) as f64;
        let p10 = self.get(xb, ya) as f64;
        let p01 = self.get(xa, yb) as f64;
        let p11 = self.get(xb, yb) as f64;
        let top = p00 + (p10 - p00) * tx;
        let bottom = p01 + (p11 - p01) * tx;
        top + (bottom - top) * ty
    }

    /// Quantizes to 8-bit luminance.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

/// Axis-aligned box in pixel coordinates, origin top-left, x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, FrameError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(FrameError::DegenerateBox { x_min, y_min, x_max, y_max });
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, FrameError> {
        Self::new(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x_min: self.x_min + dx, y_min: self.y_min + dy, x_max: self.x_max + dx, y_max: self.y_max + dy }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (hw, hh) = (self.width() * factor / 2.0, self.height() * factor / 2.0);
        Self { x_min: cx - hw, y_min: cy - hh, x_max: cx + hw, y_max: cy + hh }
    }

    pub fn intersects_frame(&self, width: usize, height: usize) -> bool {
        self.x_max > 0.0 && self.y_max > 0.0 && self.x_min < width as f64 && self.y_min < height as f64
    }

    pub fn within_frame(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width as f64 && self.y_max <= height as f64
    }

    /// Intersection with `[0, width] x [0, height]`; fails when nothing is left.
    pub fn clamped_to(&self, width: usize, height: usize) -> Result<Self, FrameError> {
        if !self.intersects_frame(width, height) {
            return Err(FrameError::OutsideFrame { width, height });
        }
        Self::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width as f64),
            self.y_max.min(height as f64),
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}
