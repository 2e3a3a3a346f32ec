//! Sketch interpretation: navigation strokes become direction + magnitude
//! commands, closed strokes on the video canvas become target selections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::BoundingBox;
use crate::servo::ControlCommand;
use crate::tracker::MIN_TRAIN_AREA;

pub const DEFAULT_DEAD_ZONE_PX: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum SketchError {
    #[error("stroke needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("stroke point ({x}, {y}) lies outside the {w}x{h} canvas")]
    OutOfCanvas { x: f64, y: f64, w: f64, h: f64 },
    #[error("canvas dimensions must be positive")]
    BadCanvas,
    #[error("video-canvas strokes select targets; they are not navigation commands")]
    VideoCanvas,
    #[error("navigation strokes cannot select a target")]
    NotVideoCanvas,
    #[error("selection encloses {area:.1} px, below the {MIN_TRAIN_AREA} px minimum; circle a larger region")]
    SelectionTooSmall { area: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanvasId {
    Translate,
    Yaw,
    Altitude,
    Video,
}

/// Eight compass sectors, counter-clockwise from east in a y-up frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    NorthEast,
    North,
    NorthWest,
    West,
    SouthWest,
    South,
    SouthEast,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::East,
        Direction::NorthEast,
        Direction::North,
        Direction::NorthWest,
        Direction::West,
        Direction::SouthWest,
        Direction::South,
        Direction::SouthEast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 8]
    }

    pub fn angle_deg(self) -> f64 {
        self.index() as f64 * 45.0
    }

    /// Unit vector of the sector center (x right, y up).
    pub fn unit(self) -> (f64, f64) {
        let a = self.angle_deg().to_radians();
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        (snap(a.cos()), snap(a.sin()))
    }
}

/// Snaps a y-up displacement to the nearest of eight 45-degree sectors.
/// Returns `None` inside the dead zone. Exact sector boundaries go to the
/// lower angle.
pub fn quantize_direction(dx: f64, dy: f64, dead_zone: f64) -> Option<Direction> {
    if dx.hypot(dy) <= dead_zone || !(dx.is_finite() && dy.is_finite()) {
        return None;
    }
    let deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
    let idx = ((deg - 22.5) / 45.0).ceil().rem_euclid(8.0) as usize;
    Some(Direction::from_index(idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    pub ts_ms: u64,
}

/// Points in canvas pixels, origin top-left, y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub canvas: CanvasId,
    pub points: Vec<StrokePoint>,
    pub canvas_w: f64,
    pub canvas_h: f64,
}

impl Stroke {
    pub fn new(canvas: CanvasId, points: Vec<(f64, f64)>, canvas_w: f64, canvas_h: f64) -> Self {
        let points = points.into_iter().enumerate().map(|(i, (x, y))| StrokePoint { x, y, ts_ms: i as u64 }).collect();
        Self { canvas, points, canvas_w, canvas_h }
    }

    fn check_bounds(&self) -> Result<(), SketchError> {
        if !(self.canvas_w > 0.0 && self.canvas_h > 0.0) {
            return Err(SketchError::BadCanvas);
        }
        for p in &self.points {
            if !(p.x >= 0.0 && p.x <= self.canvas_w && p.y >= 0.0 && p.y <= self.canvas_h) {
                return Err(SketchError::OutOfCanvas { x: p.x, y: p.y, w: self.canvas_w, h: self.canvas_h });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavCommand {
    pub canvas: CanvasId,
    pub direction: Direction,
    /// In `[0, speed_cap]`.
    pub magnitude: f64,
}

impl NavCommand {
    /// Command-vector contribution of this stroke. The translate canvas
    /// drives roll (east) and pitch (north); the yaw canvas drives yaw rate
    /// from its horizontal component; the altitude canvas drives vertical
    /// speed from its vertical component.
    pub fn to_command(&self, ts_ms: u64) -> ControlCommand {
        let (ux, uy) = self.direction.unit();
        let m = self.magnitude;
        match self.canvas {
            CanvasId::Translate => ControlCommand::clamped(m * ux, m * uy, 0.0, 0.0, ts_ms),
            CanvasId::Yaw => ControlCommand::clamped(0.0, 0.0, 0.0, m * ux, ts_ms),
            CanvasId::Altitude => ControlCommand::clamped(0.0, 0.0, m * uy, 0.0, ts_ms),
            CanvasId::Video => ControlCommand::hover(ts_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchConfig {
    pub dead_zone_px: f64,
    /// Upper bound on stroke magnitude, in `[0, 1]`.
    pub speed_cap: f64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self { dead_zone_px: DEFAULT_DEAD_ZONE_PX, speed_cap: 1.0 }
    }
}

/// Interprets a navigation stroke by its net displacement, normalized by the
/// canvas diagonal. `Ok(None)` means the stroke fell inside the dead zone.
pub fn stroke_to_command(stroke: &Stroke, cfg: &SketchConfig) -> Result<Option<NavCommand>, SketchError> {
    if stroke.canvas == CanvasId::Video {
        return Err(SketchError::VideoCanvas);
    }
    if stroke.points.len() < 2 {
        return Err(SketchError::TooFewPoints { needed: 2, got: stroke.points.len() });
    }
    stroke.check_bounds()?;
    let first = stroke.points[0];
    let last = stroke.points[stroke.points.len() - 1];
    // canvas y grows downward; flip to y-up before taking the angle
    let dx = last.x - first.x;
    let dy = first.y - last.y;
    let Some(direction) = quantize_direction(dx, dy, cfg.dead_zone_px) else {
        return Ok(None);
    };
    let diagonal = stroke.canvas_w.hypot(stroke.canvas_h);
    let magnitude = (dx.hypot(dy) / diagonal).min(cfg.speed_cap.clamp(0.0, 1.0));
    Ok(Some(NavCommand { canvas: stroke.canvas, direction, magnitude }))
}

/// Axis-aligned extent of a closed stroke on the video canvas, rescaled to
/// a `frame_w x frame_h` image and clamped to it.
///
/// The stroke must enclose at least [`MIN_TRAIN_AREA`] frame pixels, measured
/// as the area of its convex hull.
pub fn bbox_from_stroke(stroke: &Stroke, frame_w: usize, frame_h: usize) -> Result<BoundingBox, SketchError> {
    if stroke.canvas != CanvasId::Video {
        return Err(SketchError::NotVideoCanvas);
    }
    if stroke.points.len() < 3 {
        return Err(SketchError::TooFewPoints { needed: 3, got: stroke.points.len() });
    }
    stroke.check_bounds()?;
    let sx = frame_w as f64 / stroke.canvas_w;
    let sy = frame_h as f64 / stroke.canvas_h;
    let pts: Vec<(f64, f64)> = stroke.points.iter().map(|p| (p.x * sx, p.y * sy)).collect();
    let area = hull_area(&pts);
    if area < MIN_TRAIN_AREA {
        return Err(SketchError::SelectionTooSmall { area });
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| pts.iter().map(pick).fold(init, f);
    let x_min = fold(f64::min, f64::INFINITY, |p| p.0).max(0.0);
    let x_max = fold(f64::max, f64::NEG_INFINITY, |p| p.0).min(frame_w as f64);
    let y_min = fold(f64::min, f64::INFINITY, |p| p.1).max(0.0);
    let y_max = fold(f64::max, f64::NEG_INFINITY, |p| p.1).min(frame_h as f64);
    BoundingBox::new(x_min, y_min, x_max, y_max).map_err(|_| SketchError::SelectionTooSmall { area })
}

/// Area of the convex hull (monotone chain); independent of point order and
/// duplicates.
fn hull_area(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let n = hull.len();
    (0..n).map(|i| cross((0.0, 0.0), hull[i], hull[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }

    #[test]
    fn quantizes_axes_and_diagonals() {
        assert_eq!(quantize_direction(100.0, 0.0, 8.0), Some(Direction::East));
        assert_eq!(quantize_direction(70.0, 70.0, 8.0), Some(Direction::NorthEast));
        // atan2(5, 100) = 2.9 degrees
        assert_eq!(quantize_direction(100.0, 5.0, 8.0), Some(Direction::East));
        assert_eq!(quantize_direction(0.0, -30.0, 8.0), Some(Direction::South));
        assert_eq!(quantize_direction(5.0, 5.0, 8.0), None);
    }

    #[test]
    fn boundaries_snap_to_lower_sector() {
        let a = 22.5_f64.to_radians();
        assert_eq!(quantize_direction(100.0 * a.cos(), 100.0 * a.sin(), 8.0), Some(Direction::East));
        let a = 337.5_f64.to_radians();
        assert_eq!(quantize_direction(100.0 * a.cos(), 100.0 * a.sin(), 8.0), Some(Direction::SouthEast));
    }

    #[test]
    fn magnitude_is_normalized_by_diagonal() {
        let cfg = SketchConfig::default();
        let full = Stroke::new(CanvasId::Translate, vec![(0.0, 300.0), (400.0, 0.0)], 400.0, 300.0);
        let cmd = stroke_to_command(&full, &cfg).unwrap().unwrap();
        assert!((cmd.magnitude - 1.0).abs() < 1e-12);
        let half = Stroke::new(CanvasId::Translate, vec![(0.0, 300.0), (200.0, 150.0)], 400.0, 300.0);
        assert!((stroke_to_command(&half, &cfg).unwrap().unwrap().magnitude - 0.5).abs() < 1e-12);
    }

    #[test]
    fn speed_cap_limits_magnitude() {
        let cfg = SketchConfig { speed_cap: 0.3, ..Default::default() };
        let full = Stroke::new(CanvasId::Yaw, vec![(0.0, 150.0), (400.0, 150.0)], 400.0, 300.0);
        let cmd = stroke_to_command(&full, &cfg).unwrap().unwrap();
        assert_eq!(cmd.magnitude, 0.3);
    }

    #[test]
    fn canvas_to_axis_mapping() {
        let cfg = SketchConfig::default();
        let east = |canvas| Stroke::new(canvas, vec![(10.0, 150.0), (390.0, 150.0)], 400.0, 300.0);
        let up = |canvas| Stroke::new(canvas, vec![(200.0, 290.0), (200.0, 10.0)], 400.0, 300.0);
        let yaw = stroke_to_command(&east(CanvasId::Yaw), &cfg).unwrap().unwrap().to_command(0);
        assert!(yaw.yaw_rate > 0.0 && yaw.roll == 0.0 && yaw.vertical == 0.0);
        let climb = stroke_to_command(&up(CanvasId::Altitude), &cfg).unwrap().unwrap().to_command(0);
        assert!(climb.vertical > 0.0 && climb.yaw_rate == 0.0);
        let fwd = stroke_to_command(&up(CanvasId::Translate), &cfg).unwrap().unwrap().to_command(0);
        assert!(fwd.pitch > 0.0 && fwd.roll == 0.0);
        let right = stroke_to_command(&east(CanvasId::Translate), &cfg).unwrap().unwrap().to_command(0);
        assert!(right.roll > 0.0 && right.pitch == 0.0);
        // yaw canvas ignores vertical motion, altitude canvas ignores horizontal
        assert_eq!(stroke_to_command(&up(CanvasId::Yaw), &cfg).unwrap().unwrap().to_command(0).yaw_rate, 0.0);
    }

    #[test]
    fn navigation_rejects_video_and_out_of_bounds() {
        let cfg = SketchConfig::default();
        let video = Stroke::new(CanvasId::Video, vec![(0.0, 0.0), (50.0, 0.0)], 100.0, 100.0);
        assert_eq!(stroke_to_command(&video, &cfg), Err(SketchError::VideoCanvas));
        let outside = Stroke::new(CanvasId::Yaw, vec![(0.0, 0.0), (150.0, 0.0)], 100.0, 100.0);
        assert!(matches!(stroke_to_command(&outside, &cfg), Err(SketchError::OutOfCanvas { .. })));
        let single = Stroke::new(CanvasId::Yaw, vec![(0.0, 0.0)], 100.0, 100.0);
        assert!(matches!(stroke_to_command(&single, &cfg), Err(SketchError::TooFewPoints { .. })));
    }

    #[test]
    fn circle_extent() {
        let s = Stroke::new(CanvasId::Video, circle(200.0, 150.0, 50.0, 64), 640.0, 360.0);
        let b = bbox_from_stroke(&s, 640, 360).unwrap();
        assert!((b.x_min - 150.0).abs() < 1e-9 && (b.x_max - 250.0).abs() < 1e-9);
        assert!((b.y_min - 100.0).abs() < 0.2 && (b.y_max - 200.0).abs() < 0.2);
    }

    #[test]
    fn canvas_to_frame_scaling() {
        let pts = vec![(300.0, 150.0), (450.0, 150.0), (450.0, 300.0), (300.0, 300.0)];
        let s = Stroke::new(CanvasId::Video, pts, 960.0, 540.0);
        let b = bbox_from_stroke(&s, 640, 360).unwrap();
        let expect = [200.0, 100.0, 300.0, 200.0];
        for (got, want) in b.to_array().iter().zip(expect) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_selections_are_rejected() {
        let two = Stroke::new(CanvasId::Video, vec![(0.0, 0.0), (100.0, 100.0)], 640.0, 360.0);
        assert!(matches!(bbox_from_stroke(&two, 640, 360), Err(SketchError::TooFewPoints { needed: 3, got: 2 })));
        let line = Stroke::new(CanvasId::Video, vec![(0.0, 0.0), (50.0, 50.0), (100.0, 100.0)], 640.0, 360.0);
        let err = bbox_from_stroke(&line, 640, 360).unwrap_err();
        assert!(matches!(err, SketchError::SelectionTooSmall { .. }));
        assert!(err.to_string().contains("circle a larger region"));
        let tiny = Stroke::new(CanvasId::Video, circle(100.0, 100.0, 3.0, 16), 640.0, 360.0);
        assert!(bbox_from_stroke(&tiny, 640, 360).is_err());
    }

    proptest! {
        #[test]
        fn rotating_by_45_degrees_advances_one_sector(angle in 0.0f64..360.0, len in 20.0f64..500.0) {
            // stay clear of sector boundaries where rounding could flip the tie rule
            let frac = (angle - 22.5).rem_euclid(45.0);
            prop_assume!(frac > 1e-6 && frac < 45.0 - 1e-6);
            let mut a = angle;
            let mut dir = quantize_direction(len * a.to_radians().cos(), len * a.to_radians().sin(), 8.0).unwrap();
            for _ in 0..8 {
                a += 45.0;
                let next = quantize_direction(len * a.to_radians().cos(), len * a.to_radians().sin(), 8.0).unwrap();
                prop_assert_eq!(next.index(), (dir.index() + 1) % 8);
                dir = next;
            }
        }

        #[test]
        fn magnitude_is_scale_invariant(x0 in 0.0f64..1.0, y0 in 0.0f64..1.0, x1 in 0.0f64..1.0, y1 in 0.0f64..1.0, k in 1.0f64..4.0) {
            let cfg = SketchConfig::default();
            let mk = |w: f64, h: f64| Stroke::new(CanvasId::Translate, vec![(x0 * w, y0 * h), (x1 * w, y1 * h)], w, h);
            let a = stroke_to_command(&mk(300.0, 200.0), &cfg).unwrap();
            let b = stroke_to_command(&mk(300.0 * k, 200.0 * k), &cfg).unwrap();
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a.magnitude - b.magnitude).abs() < 1e-12);
                prop_assert_eq!(a.direction, b.direction);
            }
        }

        #[test]
        fn bbox_ignores_order_and_duplicates(seed in 0u64..1000, dup in 0usize..5) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut pts = circle(320.0, 180.0, 40.0, 24);
            let base = bbox_from_stroke(&Stroke::new(CanvasId::Video, pts.clone(), 640.0, 360.0), 640, 360).unwrap();
            let extra: Vec<_> = pts.iter().take(dup).cloned().collect();
            pts.extend(extra);
            pts.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let other = bbox_from_stroke(&Stroke::new(CanvasId::Video, pts, 640.0, 360.0), 640, 360).unwrap();
            prop_assert_eq!(base, other);
        }
    }
}
