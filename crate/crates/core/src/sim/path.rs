//! Ground-truth flight-path logging and export.
//!
//! File format: UTF-8 text, first line exactly [`PATH_HEADER`], then one row
//! per sample: `t,x,y,z,yaw` with `t` in seconds (3 decimals), position in
//! meters and yaw in radians (6 decimals).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::dynamics::DroneState;
use super::SimError;

pub const PATH_HEADER: &str = "t,x,y,z,yaw";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl PathSample {
    pub fn from_state(s: &DroneState) -> Self {
        Self { t: s.t, x: s.position[0], y: s.position[1], z: s.position[2], yaw: s.yaw }
    }
}

/// Samples the vehicle state every `period_s` of simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    period_s: f64,
    next_t: f64,
    samples: Vec<PathSample>,
}

impl FlightLog {
    pub fn new(period_s: f64) -> Self {
        Self { period_s, next_t: 0.0, samples: Vec::new() }
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    /// Call once per physics tick; stores a sample when one is due.
    pub fn record(&mut self, state: &DroneState) {
        if self.samples.is_empty() {
            self.next_t = state.t;
        }
        if state.t + 1e-9 >= self.next_t {
            self.samples.push(PathSample::from_state(state));
            self.next_t += self.period_s;
        }
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }
}

/// Ordered `(t, x, y, z, yaw)` samples of a logged run.
pub fn flight_path(log: &FlightLog) -> Vec<PathSample> {
    log.samples().to_vec()
}

pub fn write_path<W: Write>(mut out: W, path: &[PathSample]) -> std::io::Result<()> {
    writeln!(out, "{PATH_HEADER}")?;
    for s in path {
        writeln!(out, "{:.3},{:.6},{:.6},{:.6},{:.6}", s.t, s.x, s.y, s.z, s.yaw)?;
    }
    Ok(())
}

pub fn read_path<R: BufRead>(input: R) -> Result<Vec<PathSample>, SimError> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == PATH_HEADER => {}
        _ => return Err(SimError::Format { line: 1, reason: format!("expected header `{PATH_HEADER}`") }),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| SimError::Format { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match vals.as_deref() {
            Ok([t, x, y, z, yaw]) => out.push(PathSample { t: *t, x: *x, y: *y, z: *z, yaw: *yaw }),
            _ => return Err(SimError::Format { line: line_no, reason: "expected five numeric columns".into() }),
        }
    }
    Ok(out)
}

/// Corner points of the horizontal track: Ramer-Douglas-Peucker simplification
/// in the x-y plane with the given tolerance, endpoints included.
pub fn path_vertices(path: &[PathSample], tolerance: f64) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = path.iter().map(|s| (s.x, s.y)).collect();
    if pts.len() < 3 {
        return pts;
    }
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0, pts.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        let mut best = (0.0, a);
        for k in a + 1..b {
            let d = segment_distance(pts[k], pts[a], pts[b]);
            if d > best.0 {
                best = (d, k);
            }
        }
        if best.0 > tolerance {
            keep[best.1] = true;
            stack.push((a, best.1));
            stack.push((best.1, b));
        }
    }
    pts.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_has_header_only() {
        let mut buf = Vec::new();
        write_path(&mut buf, &flight_path(&FlightLog::new(0.1))).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x,y,z,yaw\n");
        assert!(read_path(&b"t,x,y,z,yaw\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn samples_at_logging_period() {
        let mut log = FlightLog::new(0.1);
        let mut s = DroneState::default();
        for _ in 0..1000 {
            s.t += 0.01;
            log.record(&s);
        }
        let ts: Vec<f64> = log.samples().iter().map(|p| p.t).collect();
        for w in ts.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() <= 0.01 + 1e-9);
        }
        assert_eq!(ts.len(), 100);
    }

    #[test]
    fn round_trip_and_bad_input() {
        let path = vec![PathSample { t: 0.5, x: 1.25, y: -2.0, z: 1.0, yaw: 0.125 }];
        let mut buf = Vec::new();
        write_path(&mut buf, &path).unwrap();
        assert_eq!(read_path(&buf[..]).unwrap(), path);
        assert!(matches!(read_path(&b"bogus\n"[..]), Err(SimError::Format { line: 1, .. })));
        assert!(matches!(read_path(&b"t,x,y,z,yaw\n1,2,3\n"[..]), Err(SimError::Format { line: 2, .. })));
    }

    #[test]
    fn triangle_vertices() {
        let corners = [(0.0, 0.0), (-1.5, 4.0), (1.5, 4.0), (0.0, 0.0)];
        let mut path = Vec::new();
        for w in corners.windows(2) {
            for k in 0..50 {
                let t = k as f64 / 50.0;
                path.push(PathSample { t: 0.0, x: w[0].0 + t * (w[1].0 - w[0].0), y: w[0].1 + t * (w[1].1 - w[0].1), z: 1.0, yaw: 0.0 });
            }
        }
        path.push(PathSample { t: 0.0, x: 0.0, y: 0.0, z: 1.0, yaw: 0.0 });
        let v = path_vertices(&path, 0.1);
        assert_eq!(v.len(), 4);
        for (got, want) in v.iter().zip(corners) {
            assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9);
        }
    }
}
