//! Image-based visual servoing: normalized centroid error, a PD law on yaw
//! rate and vertical speed, and the clamped four-axis command vector.

mod scheduler;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tracker::TrackResult;

pub use scheduler::{CadenceStats, CommandScheduler, Mailbox, PeriodicTicker, ZeroOrderHold, COMMAND_RATE_HZ};

#[derive(Debug, Error, PartialEq)]
pub enum ServoError {
    #[error("timestamp {now_ms} ms does not follow previous step at {prev_ms} ms")]
    NonMonotonic { prev_ms: u64, now_ms: u64 },
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
}

/// Centroid offset from the canvas center, normalized by the canvas size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidError {
    pub x: f64,
    pub y: f64,
}

pub fn centroid_error(centroid: (f64, f64), canvas: (f64, f64)) -> CentroidError {
    let (x_max, y_max) = canvas;
    CentroidError { x: (centroid.0 - x_max / 2.0) / x_max, y: (centroid.1 - y_max / 2.0) / y_max }
}

/// Four-axis command, every component in `[-1, 1]`.
///
/// Positive roll moves right, positive pitch moves forward, positive
/// vertical climbs and positive yaw rate turns right (clockwise from above).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub roll: f64,
    pub pitch: f64,
    pub vertical: f64,
    pub yaw_rate: f64,
    pub ts_ms: u64,
}

impl ControlCommand {
    pub const HOVER: Self = Self { roll: 0.0, pitch: 0.0, vertical: 0.0, yaw_rate: 0.0, ts_ms: 0 };

    /// Builds a command with each component clamped; NaN maps to 0.
    pub fn clamped(roll: f64, pitch: f64, vertical: f64, yaw_rate: f64, ts_ms: u64) -> Self {
        Self { roll: clamp_unit(roll), pitch: clamp_unit(pitch), vertical: clamp_unit(vertical), yaw_rate: clamp_unit(yaw_rate), ts_ms }
    }

    pub fn hover(ts_ms: u64) -> Self {
        Self { ts_ms, ..Self::HOVER }
    }

    pub fn axes(&self) -> [f64; 4] {
        [self.roll, self.pitch, self.vertical, self.yaw_rate]
    }

    pub fn is_hover(&self) -> bool {
        self.axes().iter().all(|&a| a == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.axes().iter().all(|a| a.is_finite())
    }
}

pub fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdConfig {
    pub kp: f64,
    pub kd: f64,
    /// Weight kept from the previous derivative estimate, in `[0, 1]`.
    pub derivative_smoothing: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self { kp: 0.25, kd: 0.25, derivative_smoothing: 0.7 }
    }
}

impl PdConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        if !(self.kp >= 0.0 && self.kd >= 0.0) || !self.kp.is_finite() || !self.kd.is_finite() {
            return Err(ServoError::InvalidConfig("gains must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.derivative_smoothing) {
            return Err(ServoError::InvalidConfig("derivative_smoothing must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Output of one PD step, already mapped to command axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PdOutput {
    pub yaw_rate: f64,
    pub vertical: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdState {
    cfg: PdConfig,
    prev_error: Option<CentroidError>,
    prev_ts_ms: u64,
    derivative: CentroidError,
}

impl PdState {
    pub fn new(cfg: PdConfig) -> Result<Self, ServoError> {
        cfg.validate()?;
        Ok(Self { cfg, prev_error: None, prev_ts_ms: 0, derivative: CentroidError::default() })
    }

    pub fn config(&self) -> &PdConfig {
        &self.cfg
    }

    /// Forgets the error history; the next step has no derivative term.
    pub fn reset(&mut self) {
        self.prev_error = None;
        self.derivative = CentroidError::default();
    }

    /// Yaw rate follows `error.x`; vertical follows `-error.y` because image y
    /// grows downward and a target above center should make the drone climb.
    pub fn step(&mut self, e: CentroidError, now_ms: u64) -> Result<PdOutput, ServoError> {
        if let Some(prev) = self.prev_error {
            if now_ms <= self.prev_ts_ms {
                return Err(ServoError::NonMonotonic { prev_ms: self.prev_ts_ms, now_ms });
            }
            let dt = (now_ms - self.prev_ts_ms) as f64 / 1000.0;
            let a = self.cfg.derivative_smoothing;
            self.derivative.x = a * self.derivative.x + (1.0 - a) * (e.x - prev.x) / dt;
            self.derivative.y = a * self.derivative.y + (1.0 - a) * (e.y - prev.y) / dt;
        }
        self.prev_error = Some(e);
        self.prev_ts_ms = now_ms;
        let law = |err: f64, d: f64| clamp_unit(self.cfg.kp * err + self.cfg.kd * d);
        Ok(PdOutput { yaw_rate: law(e.x, self.derivative.x), vertical: -law(e.y, self.derivative.y) })
    }
}

/// Translation behavior while the target is being servoed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServoMode {
    /// No translation: roll and pitch are held at exactly zero.
    #[default]
    Hold,
    /// Constant tangential roll/pitch while yaw keeps the target centered.
    Orbit { roll: f64, pitch: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoOutput {
    pub command: ControlCommand,
    pub error: Option<CentroidError>,
    pub track_lost: bool,
}

/// Maps one tracker result to a command. An invalid track yields the hover
/// command, resets the PD history and reports the loss.
pub fn servo_command(
    track: &TrackResult,
    pd: &mut PdState,
    mode: ServoMode,
    canvas: (f64, f64),
    now_ms: u64,
) -> Result<ServoOutput, ServoError> {
    if !track.valid {
        pd.reset();
        return Ok(ServoOutput { command: ControlCommand::hover(now_ms), error: None, track_lost: true });
    }
    let e = centroid_error(track.centroid, canvas);
    let out = pd.step(e, now_ms)?;
    let (roll, pitch) = match mode {
        ServoMode::Hold => (0.0, 0.0),
        ServoMode::Orbit { roll, pitch } => (roll, pitch),
    };
    Ok(ServoOutput {
        command: ControlCommand::clamped(roll, pitch, out.vertical, out.yaw_rate, now_ms),
        error: Some(e),
        track_lost: false,
    })
}
