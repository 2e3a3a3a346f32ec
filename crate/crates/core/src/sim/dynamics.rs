//! First-order-lag quadcopter kinematics.
//!
//! World frame: x east, y north, z up (meters). Yaw is a compass heading,
//! clockwise from north, so a positive yaw-rate command turns right.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::servo::ControlCommand;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneParams {
    /// Attitude and rate time constant, seconds. Zero means instantaneous.
    pub tau: f64,
    pub max_tilt: f64,
    pub max_climb: f64,
    pub max_yaw_rate: f64,
    pub max_speed: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self { tau: 0.2, max_tilt: 0.35, max_climb: 1.0, max_yaw_rate: 1.75, max_speed: 11.0 }
    }
}

impl DroneParams {
    /// Linear drag that makes `max_speed` the terminal speed at full tilt.
    pub fn drag(&self) -> f64 {
        GRAVITY * self.max_tilt.tan() / self.max_speed
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.tau >= 0.0
            && self.max_tilt > 0.0
            && self.max_tilt < std::f64::consts::FRAC_PI_2
            && self.max_climb > 0.0
            && self.max_yaw_rate > 0.0
            && self.max_speed > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("drone parameters out of range".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneState {
    pub position: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    /// Heading in `(-pi, pi]`, clockwise from north.
    pub yaw: f64,
    pub yaw_rate: f64,
    pub vertical_velocity: f64,
    pub velocity: [f64; 2],
    pub t: f64,
}

impl DroneState {
    pub fn at(position: [f64; 3], yaw: f64) -> Self {
        Self { position, yaw: wrap_angle(yaw), ..Default::default() }
    }

    pub fn forward(&self) -> [f64; 3] {
        [self.yaw.sin(), self.yaw.cos(), 0.0]
    }

    pub fn right(&self) -> [f64; 3] {
        [self.yaw.cos(), -self.yaw.sin(), 0.0]
    }

    pub fn horizontal_speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.velocity).all(|v| v.is_finite())
            && [self.roll, self.pitch, self.yaw, self.yaw_rate, self.vertical_velocity, self.t].iter().all(|v| v.is_finite())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + std::f64::consts::TAU
    } else {
        w
    }
}

/// Exact first-order lag toward a constant target over `dt`: the new value and
/// its time integral over the step.
fn lag(x0: f64, target: f64, tau: f64, dt: f64) -> (f64, f64) {
    if tau <= 0.0 {
        return (target, target * dt);
    }
    let alpha = 1.0 - (-dt / tau).exp();
    let x1 = target + (x0 - target) * (1.0 - alpha);
    let integral = target * dt + (x0 - target) * tau * alpha;
    (x1, integral)
}

/// The vehicle at rest on the ground where it stands: rates, tilt and
/// velocities zeroed, heading and clock kept.
pub fn settle(state: &DroneState) -> DroneState {
    DroneState { position: [state.position[0], state.position[1], 0.0], yaw: state.yaw, t: state.t, ..Default::default() }
}

/// Advances the vehicle by `dt` seconds under command `u`.
pub fn step(state: &DroneState, u: &ControlCommand, dt: f64, params: &DroneParams) -> Result<DroneState, SimError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(SimError::BadTimeStep(dt));
    }
    if !u.is_finite() {
        return Err(SimError::NonFiniteCommand);
    }
    let u = ControlCommand::clamped(u.roll, u.pitch, u.vertical, u.yaw_rate, u.ts_ms);
    let mut s = *state;
    let tau = params.tau;

    s.roll = lag(state.roll, u.roll * params.max_tilt, tau, dt).0;
    s.pitch = lag(state.pitch, u.pitch * params.max_tilt, tau, dt).0;

    let (yaw_rate, dyaw) = lag(state.yaw_rate, u.yaw_rate * params.max_yaw_rate, tau, dt);
    s.yaw_rate = yaw_rate;
    s.yaw = wrap_angle(state.yaw + dyaw);

    let (vz, dz) = lag(state.vertical_velocity, u.vertical * params.max_climb, tau, dt);
    s.vertical_velocity = vz;
    s.position[2] = state.position[2] + dz;
    if s.position[2] <= 0.0 {
        s.position[2] = 0.0;
        s.vertical_velocity = s.vertical_velocity.max(0.0);
    }

    let a_fwd = GRAVITY * s.pitch.tan();
    let a_right = GRAVITY * s.roll.tan();
    let fwd = s.forward();
    let right = s.right();
    let drag = params.drag();
    for i in 0..2 {
        let a = fwd[i] * a_fwd + right[i] * a_right - drag * state.velocity[i];
        s.velocity[i] = state.velocity[i] + a * dt;
    }
    let speed = s.horizontal_speed();
    if speed > params.max_speed {
        let k = params.max_speed / speed;
        s.velocity.iter_mut().for_each(|v| *v *= k);
    }
    s.position[0] += s.velocity[0] * dt;
    s.position[1] += s.velocity[1] * dt;
    s.t = state.t + dt;
    Ok(s)
}
