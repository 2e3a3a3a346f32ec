//! Forward-facing pinhole camera and a painter's-algorithm renderer.
//!
//! The camera is mounted at the vehicle origin and follows its heading; it
//! stays level through roll and pitch.

use serde::{Deserialize, Serialize};

use super::dynamics::DroneState;
use super::scene::{Billboard, Scene};
use super::texture::{NoiseTable, ValueNoise};
use super::SimError;
use crate::frame::{BoundingBox, GrayFrame};

const NEAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Horizontal field of view, degrees.
    pub hfov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { hfov_deg: 16.0, width: 640, height: 360, fps: 30.0 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) || self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return Err(SimError::InvalidConfig("camera model out of range".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Image coordinates of a world point, or `None` behind the near plane.
    pub fn project(&self, state: &DroneState, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let d = sub(p, state.position);
        let depth = dot(d, state.forward());
        if depth <= NEAR {
            return None;
        }
        let f = self.focal();
        let (cx, cy) = self.center();
        Some((cx + f * dot(d, state.right()) / depth, cy - f * d[2] / depth, depth))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Exact projected extent of a billboard, clamped to the image. `None` when
/// the object is hidden, (partly) behind the camera, or entirely off-frame.
pub fn ground_truth_bbox(
    state: &DroneState,
    scene: &Scene,
    cam: &CameraModel,
    object_id: &str,
) -> Result<Option<BoundingBox>, SimError> {
    let obj = scene.object(object_id)?;
    if !obj.visible {
        return Ok(None);
    }
    Ok(projected_extent(state, obj, cam).and_then(|b| b.clamped_to(cam.width, cam.height).ok()))
}

/// Unclamped projected extent.
pub fn projected_extent(state: &DroneState, obj: &Billboard, cam: &CameraModel) -> Option<BoundingBox> {
    let mut pts = Vec::with_capacity(4);
    for c in obj.corners() {
        let (u, v, _) = cam.project(state, c)?;
        pts.push((u, v));
    }
    let x_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    BoundingBox::new(x_min, y_min, x_max, y_max).ok()
}

/// Per-pixel index into `scene.objects` of the billboard that was painted last.
pub type LabelMap = Vec<Option<usize>>;

pub fn render(state: &DroneState, scene: &Scene, cam: &CameraModel, seq: u64, ts_ms: u64) -> GrayFrame {
    render_into(state, scene, cam, seq, ts_ms, None)
}

pub fn render_with_labels(
    state: &DroneState,
    scene: &Scene,
    cam: &CameraModel,
    seq: u64,
    ts_ms: u64,
) -> (GrayFrame, LabelMap) {
    let mut labels: LabelMap = vec![None; cam.width * cam.height];
    let frame = render_into(state, scene, cam, seq, ts_ms, Some(&mut labels));
    (frame, labels)
}

fn render_into(
    state: &DroneState,
    scene: &Scene,
    cam: &CameraModel,
    seq: u64,
    ts_ms: u64,
    mut labels: Option<&mut LabelMap>,
) -> GrayFrame {
    let (w, h) = (cam.width, cam.height);
    let f = cam.focal();
    let (cx, cy) = cam.center();
    let mut pixels = vec![0.0f32; w * h];

    // background: a cylinder around the vehicle, brighter overhead, with
    // world-anchored low-contrast noise
    const TEXELS_PER_RAD: f64 = 180.0;
    const PANORAMA_W: usize = 1131; // ceil(2 pi * TEXELS_PER_RAD)
    const PANORAMA_H: usize = 361;
    let noise = NoiseTable::cached(ValueNoise::new(scene.background_seed, 6.0, 2), PANORAMA_W, PANORAMA_H, true);
    let columns: Vec<((usize, usize, f64), f64)> = (0..w)
        .map(|i| {
            let x = i as f64 + 0.5 - cx;
            let az = (state.yaw + (x / f).atan()).rem_euclid(std::f64::consts::TAU);
            (noise.column(az * TEXELS_PER_RAD), 1.0 / (f * f + x * x).sqrt())
        })
        .collect();
    let elevation = |y: f64, inv_norm: f64| (y * inv_norm).clamp(-1.0, 1.0);
    let texel_row = |e: f64| ((e + 1.0) * TEXELS_PER_RAD).clamp(0.0, (noise.height() - 1) as f64);
    // Texel rows the frame can touch; elevation is monotonic in y per column.
    let (y_top, y_bottom) = (cy - 0.5, cy - (h as f64 - 0.5));
    let (mut r_lo, mut r_hi) = (usize::MAX, 0);
    for &(_, inv_norm) in &columns {
        r_lo = r_lo.min(texel_row(elevation(y_bottom, inv_norm)) as usize);
        r_hi = r_hi.max(texel_row(elevation(y_top, inv_norm)) as usize + 1);
    }
    let r_hi = r_hi.min(noise.height() - 1);
    // each texel row interpolated at every image column, row-major
    let mut lerped = Vec::with_capacity((r_hi + 1 - r_lo) * w);
    for r in r_lo..=r_hi {
        lerped.extend(columns.iter().map(|&(col, _)| noise.row_at_column(col, r)));
    }
    for (j, row) in pixels.chunks_exact_mut(w).enumerate() {
        let y = cy - (j as f64 + 0.5);
        for (i, (px, &(_, inv_norm))) in row.iter_mut().zip(&columns).enumerate() {
            let e = elevation(y, inv_norm);
            let base = 0.45 + 0.2 * e;
            let ty = texel_row(e);
            // non-negative and small, so truncation is floor; the i32 cast is
            // far cheaper than a saturating cast to usize
            let j0 = ty as i32 as usize;
            let j1 = (j0 + 1).min(noise.height() - 1);
            let top = lerped[(j0 - r_lo) * w + i];
            let bottom = lerped[(j1 - r_lo) * w + i];
            let n = top + (bottom - top) * (ty - j0 as f64) - 0.5;
            *px = (base + 0.12 * n) as f32;
        }
    }

    // painter's algorithm: farthest billboard first
    let mut order: Vec<(usize, f64)> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.visible)
        .map(|(k, o)| (k, dot(sub(o.center, state.position), state.forward())))
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

    let fwd = state.forward();
    let right = state.right();
    for (k, _) in order {
        let obj = &scene.objects[k];
        let (i0, i1, j0, j1) = match projected_extent(state, obj, cam) {
            Some(b) => {
                if !b.intersects_frame(w, h) {
                    continue;
                }
                (
                    b.x_min.floor().max(0.0) as usize,
                    (b.x_max.ceil().max(0.0) as usize).min(w),
                    b.y_min.floor().max(0.0) as usize,
                    (b.y_max.ceil().max(0.0) as usize).min(h),
                )
            }
            // a corner is behind the camera: ray-test the whole image
            None => (0, w, 0, h),
        };
        let n = obj.normal();
        let across = obj.across();
        let texture = obj.texture.sampler();
        let rel = sub(obj.center, state.position);
        let plane_dist = dot(rel, n);
        for j in j0..j1 {
            let up = (cy - (j as f64 + 0.5)) / f;
            for i in i0..i1 {
                let rx = (i as f64 + 0.5 - cx) / f;
                let dir = [fwd[0] + rx * right[0], fwd[1] + rx * right[1], up];
                let denom = dot(dir, n);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = plane_dist / denom;
                if t <= NEAR {
                    continue;
                }
                let hit = [dir[0] * t - rel[0], dir[1] * t - rel[1], dir[2] * t - rel[2]];
                let s = dot(hit, across) / obj.size[0];
                let v = hit[2] / obj.size[1];
                if s.abs() > 0.5 || v.abs() > 0.5 {
                    continue;
                }
                pixels[j * w + i] = texture.sample(s + 0.5, 0.5 - v).clamp(0.0, 1.0) as f32;
                if let Some(l) = labels.as_deref_mut() {
                    l[j * w + i] = Some(k);
                }
            }
        }
    }
    GrayFrame::new(w, h, pixels, seq, ts_ms).expect("camera model validated")
}
