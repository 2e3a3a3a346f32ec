//! Deterministic quadcopter simulator: kinematics, scene, camera, path log.

pub mod camera;
pub mod dynamics;
pub mod path;
pub mod scene;
pub mod texture;

use thiserror::Error;

pub use camera::{ground_truth_bbox, projected_extent, render, render_with_labels, CameraModel};
pub use dynamics::{settle, step, DroneParams, DroneState};
pub use path::{flight_path, path_vertices, read_path, write_path, FlightLog, PathSample, PATH_HEADER};
pub use scene::{Billboard, Scene};
pub use texture::{Texture, ValueNoise};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time step {0} s outside (0, 0.1]")]
    BadTimeStep(f64),
    #[error("command contains non-finite components")]
    NonFiniteCommand,
    #[error("unknown scene object `{0}`")]
    UnknownObject(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}
