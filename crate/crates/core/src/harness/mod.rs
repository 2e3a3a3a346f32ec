//! Headless scenario runner: scripted flights and tracking engagements
//! against the simulator, with a reproducible JSON report.
//!
//! Scenario files are TOML. Top level: `name`, `seed`, `export_period`,
//! tables `[drone]`, `[dynamics]`, `[camera]`, `[tracker]`, `[servo]`,
//! `[collector]`, `[sketch]`, `[scene]`, arrays `[[objects]]` (billboards)
//! and `[[steps]]`. Each step has an `action`: `takeoff`, `land`, `hold`,
//! `command`, `stroke`, `goto`, `track`, `stop` or `go`.

mod bench;
mod replay;

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{CollectorConfig, MANIFEST_FILE};
use crate::control::{ControlConfig, ControlError, ControlEvent, ControlLoop, FlightPhase, Mode, Notice};
use crate::servo::{centroid_error, ControlCommand, PdConfig, ServoMode};
use crate::sim::{self, path_vertices, Billboard, CameraModel, DroneParams, DroneState, PathSample, Scene};
use crate::sketch::{CanvasId, SketchConfig, Stroke};
use crate::tracker::TrackerConfig;

pub use bench::{bench_tracker, shift_oracle, translation_sequence, BenchConfig, BenchReport, BenchTiming, SequenceResult, ShiftOracle};
pub use replay::{read_commands, replay, write_commands, CommandRow, COMMAND_HEADER};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Convergence band on the normalized horizontal error.
pub const CONVERGED_ERROR: f64 = 0.02;
/// Ramer-Douglas-Peucker tolerance for path vertices, meters.
pub const VERTEX_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {message}", location(*.line, *.column, field.as_deref()))]
    Config { line: usize, column: usize, field: Option<String>, message: String },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("step {index} ({action}): {message}")]
    Step { index: usize, action: String, message: String },
}

fn location(line: usize, column: usize, field: Option<&str>) -> String {
    match field {
        Some(f) => format!("line {line}, column {column}, field `{f}`"),
        None => format!("line {line}, column {column}"),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn default_export_period() -> f64 {
    0.1
}

fn default_timeout() -> f64 {
    30.0
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_speed() -> f64 {
    1.5
}

fn default_track_mode() -> Mode {
    Mode::Tracking
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneStart {
    pub position: [f64; 3],
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub kp: f64,
    pub kd: f64,
    pub derivative_smoothing: f64,
    /// `[roll, pitch]` held while servoing; absent means hold mode.
    pub orbit: Option<[f64; 2]>,
}

impl Default for ServoSection {
    fn default() -> Self {
        let pd = PdConfig::default();
        Self { kp: pd.kp, kd: pd.kd, derivative_smoothing: pd.derivative_smoothing, orbit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub background_seed: Option<u64>,
    pub bounds: Option<[[f64; 3]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Takeoff {
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
    Land {
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
    Hold {
        seconds: f64,
    },
    Command {
        #[serde(default)]
        roll: f64,
        #[serde(default)]
        pitch: f64,
        #[serde(default)]
        vertical: f64,
        #[serde(default)]
        yaw_rate: f64,
        seconds: f64,
    },
    Stroke {
        canvas: CanvasId,
        points: Vec<[f64; 2]>,
        canvas_size: [f64; 2],
        seconds: f64,
    },
    /// Scripted pilot: fly to `waypoint` and stop there.
    Goto {
        waypoint: [f64; 3],
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
    /// Select `object` by its true projected extent and servo on it.
    Track {
        object: String,
        seconds: f64,
        #[serde(default = "default_track_mode")]
        mode: Mode,
        /// `[start, end]` windows in seconds from step start during which
        /// the object is hidden.
        #[serde(default)]
        occlusions: Vec<[f64; 2]>,
    },
    Stop,
    Go,
}

impl Step {
    pub fn action(&self) -> &'static str {
        match self {
            Step::Takeoff { .. } => "takeoff",
            Step::Land { .. } => "land",
            Step::Hold { .. } => "hold",
            Step::Command { .. } => "command",
            Step::Stroke { .. } => "stroke",
            Step::Goto { .. } => "goto",
            Step::Track { .. } => "track",
            Step::Stop => "stop",
            Step::Go => "go",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Flight-path sampling period, seconds.
    #[serde(default = "default_export_period")]
    pub export_period: f64,
    #[serde(default)]
    pub drone: DroneStart,
    #[serde(default)]
    pub dynamics: DroneParams,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub servo: ServoSection,
    #[serde(default)]
    pub collector: CollectorConfig,
    #[serde(default)]
    pub sketch: SketchConfig,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub objects: Vec<Billboard>,
    #[serde(default)]
    pub steps: Vec<toml::Spanned<Step>>,
    #[serde(skip)]
    source: String,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Scenario {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut sc: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            let message = e.message().to_string();
            let field = message.split('`').nth(1).map(str::to_string);
            HarnessError::Config { line, column, field, message }
        })?;
        sc.source = text.to_string();
        sc.base_dir = base_dir.to_path_buf();
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().map(|s| s.get_ref())
    }

    fn step_error(&self, index: usize, field: &str, message: impl Into<String>) -> HarnessError {
        let (line, column) = self.steps.get(index).map_or((1, 1), |s| line_col(&self.source, s.span().start));
        HarnessError::Config { line, column, field: Some(format!("steps[{index}].{field}")), message: message.into() }
    }

    fn top_error(&self, field: &str, message: impl Into<String>) -> HarnessError {
        let offset = self.source.find(&format!("{field}")).unwrap_or(0);
        let (line, column) = line_col(&self.source, offset);
        HarnessError::Config { line, column, field: Some(field.to_string()), message: message.into() }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if !(self.export_period > 0.0) {
            return Err(self.top_error("export_period", "must be positive"));
        }
        self.scene().validate().map_err(|e| self.top_error("objects", e.to_string()))?;
        self.dynamics.validate().map_err(|e| self.top_error("dynamics", e.to_string()))?;
        self.camera.validate().map_err(|e| self.top_error("camera", e.to_string()))?;
        self.tracker.validate().map_err(|e| self.top_error("tracker", e.to_string()))?;
        for (i, step) in self.steps().enumerate() {
            let positive = |v: f64, field: &str| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(self.step_error(i, field, "must be positive")) };
            match step {
                Step::Takeoff { timeout_s } | Step::Land { timeout_s } => positive(*timeout_s, "timeout_s")?,
                Step::Hold { seconds } | Step::Command { seconds, .. } | Step::Stroke { seconds, .. } => positive(*seconds, "seconds")?,
                Step::Goto { tolerance, speed, timeout_s, .. } => {
                    positive(*tolerance, "tolerance")?;
                    positive(*speed, "speed")?;
                    positive(*timeout_s, "timeout_s")?;
                }
                Step::Track { object, seconds, mode, occlusions } => {
                    positive(*seconds, "seconds")?;
                    if !self.objects.iter().any(|o| &o.id == object) {
                        return Err(self.step_error(i, "object", format!("unknown object `{object}`")));
                    }
                    if *mode == Mode::Manual {
                        return Err(self.step_error(i, "mode", "track mode must be `tracking` or `collecting`"));
                    }
                    if occlusions.iter().any(|w| !(w[0] < w[1])) {
                        return Err(self.step_error(i, "occlusions", "each window needs start < end"));
                    }
                }
                Step::Stop | Step::Go => {}
            }
        }
        Ok(())
    }

    pub fn scene(&self) -> Scene {
        let mut scene = Scene { objects: self.objects.clone(), background_seed: self.seed, ..Default::default() };
        if let Some(seed) = self.scene.background_seed {
            scene.background_seed = seed;
        }
        if let Some(b) = self.scene.bounds {
            scene.bounds = b;
        }
        scene
    }

    /// The scene with file textures resolved relative to the scenario file.
    pub fn load_scene(&self) -> Result<Scene, HarnessError> {
        let mut scene = self.scene();
        scene.load_textures(&self.base_dir)?;
        Ok(scene)
    }

    pub fn start_state(&self) -> DroneState {
        DroneState::at(self.drone.position, self.drone.yaw_deg.to_radians())
    }

    pub fn control_config(&self, capture_dir: Option<PathBuf>) -> ControlConfig {
        let tracker = TrackerConfig { seed: self.seed, ..self.tracker.clone() };
        ControlConfig {
            drone: self.dynamics,
            camera: self.camera,
            tracker,
            pd: PdConfig { kp: self.servo.kp, kd: self.servo.kd, derivative_smoothing: self.servo.derivative_smoothing },
            servo_mode: self.servo.orbit.map_or(ServoMode::Hold, |[roll, pitch]| ServoMode::Orbit { roll, pitch }),
            sketch: self.sketch,
            collector: CollectorConfig { block_when_full: true, ..self.collector },
            capture_dir,
            ..Default::default()
        }
    }

    /// Waypoints the path is expected to pass through: the start and every
    /// `goto` target, deduplicated, in x-y.
    pub fn waypoints(&self) -> Vec<[f64; 2]> {
        let mut out = vec![[self.drone.position[0], self.drone.position[1]]];
        for step in self.steps() {
            if let Step::Goto { waypoint, .. } = step {
                let p = [waypoint[0], waypoint[1]];
                if !out.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < 1e-9) {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub action: String,
    pub start_s: f64,
    pub end_s: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingReport {
    pub step: usize,
    pub object: String,
    pub mode: Mode,
    pub frames: usize,
    pub valid_frames: usize,
    pub time_to_converge_s: Option<f64>,
    pub min_psr: Option<f64>,
    pub max_psr: Option<f64>,
    pub final_error_x: Option<f64>,
    /// Largest tracker-vs-truth centroid distance over valid frames with
    /// the object fully in view.
    pub max_truth_error_px: Option<f64>,
    pub track_lost_events: usize,
    /// Any nonzero roll or pitch command in hold mode.
    pub lock_violations: usize,
    pub session_id: Option<String>,
    pub captures_accepted: usize,
    pub captures_attempted: usize,
    /// Accepted captures whose frame time fell inside an occlusion window.
    pub captures_during_occlusion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub samples: usize,
    pub vertices: Vec<[f64; 2]>,
    pub waypoints: Vec<[f64; 2]>,
    /// Distance from each waypoint to its nearest path vertex.
    pub waypoint_errors_m: Vec<f64>,
    pub max_waypoint_error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandReport {
    pub count: usize,
    pub max_abs_component: f64,
    pub within_unit_box: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub duration_s: f64,
    pub steps: Vec<StepReport>,
    pub tracking: Vec<TrackingReport>,
    pub path: PathReport,
    pub commands: CommandReport,
    /// `[x, y, z, yaw]`.
    pub final_pose: [f64; 4],
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }
}

pub struct RunOutput {
    pub report: Report,
    pub path: Vec<PathSample>,
    pub commands: Vec<CommandRow>,
    /// Finalized capture session directories.
    pub sessions: Vec<PathBuf>,
}

impl RunOutput {
    /// Writes `report.json`, `path.csv` and `commands.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json())?;
        let mut path = io::BufWriter::new(fs::File::create(dir.join("path.csv"))?);
        sim::write_path(&mut path, &self.path)?;
        path.flush()?;
        let mut cmds = io::BufWriter::new(fs::File::create(dir.join("commands.csv"))?);
        write_commands(&mut cmds, &self.commands)?;
        cmds.flush()?;
        Ok(())
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    cl: ControlLoop,
    commands: Vec<CommandRow>,
    tracking: Vec<TrackingReport>,
    sessions: Vec<PathBuf>,
}

impl Runner<'_> {
    fn tick(&mut self) -> Result<crate::control::TickOutput, HarnessError> {
        let tick = self.cl.tick_count();
        let out = self.cl.step()?;
        self.commands.push(CommandRow { tick, stepped: out.stepped, command: out.command });
        Ok(out)
    }

    fn ticks_for(&self, seconds: f64) -> u64 {
        (seconds * self.cl.config().physics_hz).round() as u64
    }

    fn event(&mut self, index: usize, action: &str, event: ControlEvent) -> Result<(), HarnessError> {
        self.cl.handle(event).map_err(|e| HarnessError::Step { index, action: action.into(), message: e.to_string() })
    }

    fn run_step(&mut self, index: usize, step: &Step) -> Result<bool, HarnessError> {
        let action = step.action();
        match step {
            Step::Takeoff { timeout_s } => {
                self.event(index, action, ControlEvent::Takeoff)?;
                let limit = self.ticks_for(*timeout_s);
                for _ in 0..limit {
                    if self.cl.phase() == FlightPhase::Flying {
                        return Ok(true);
                    }
                    self.tick()?;
                }
                Ok(self.cl.phase() == FlightPhase::Flying)
            }
            Step::Land { timeout_s } => {
                self.event(index, action, ControlEvent::Land)?;
                let limit = self.ticks_for(*timeout_s);
                for _ in 0..limit {
                    if self.cl.phase() == FlightPhase::Landed {
                        return Ok(true);
                    }
                    self.tick()?;
                }
                Ok(self.cl.phase() == FlightPhase::Landed)
            }
            Step::Hold { seconds } => {
                self.event(index, action, ControlEvent::Direct(ControlCommand::HOVER))?;
                for _ in 0..self.ticks_for(*seconds) {
                    self.tick()?;
                }
                Ok(true)
            }
            Step::Command { roll, pitch, vertical, yaw_rate, seconds } => {
                let cmd = ControlCommand::clamped(*roll, *pitch, *vertical, *yaw_rate, 0);
                self.event(index, action, ControlEvent::Direct(cmd))?;
                for _ in 0..self.ticks_for(*seconds) {
                    self.tick()?;
                }
                Ok(true)
            }
            Step::Stroke { canvas, points, canvas_size, seconds } => {
                let pts = points.iter().map(|p| (p[0], p[1])).collect();
                let stroke = Stroke::new(*canvas, pts, canvas_size[0], canvas_size[1]);
                self.event(index, action, ControlEvent::Stroke(stroke))?;
                for _ in 0..self.ticks_for(*seconds) {
                    self.tick()?;
                }
                Ok(true)
            }
            Step::Goto { waypoint, tolerance, speed, timeout_s } => {
                let pilot = Pilot { target: *waypoint, tolerance: *tolerance, speed: *speed };
                for _ in 0..self.ticks_for(*timeout_s) {
                    if pilot.arrived(self.cl.state()) {
                        self.event(index, action, ControlEvent::Direct(ControlCommand::HOVER))?;
                        return Ok(true);
                    }
                    let cmd = pilot.command(self.cl.state());
                    self.event(index, action, ControlEvent::Direct(cmd))?;
                    self.tick()?;
                }
                self.event(index, action, ControlEvent::Direct(ControlCommand::HOVER))?;
                Ok(false)
            }
            Step::Track { object, seconds, mode, occlusions } => self.track(index, object, *seconds, *mode, occlusions),
            Step::Stop => {
                self.event(index, action, ControlEvent::Stop)?;
                Ok(true)
            }
            Step::Go => {
                self.event(index, action, ControlEvent::Go)?;
                Ok(true)
            }
        }
    }

    fn track(&mut self, index: usize, object: &str, seconds: f64, mode: Mode, occlusions: &[[f64; 2]]) -> Result<bool, HarnessError> {
        let err = |m: String| HarnessError::Step { index, action: "track".into(), message: m };
        if self.cl.last_frame().is_none() {
            self.tick()?;
        }
        let cam = self.cl.config().camera;
        let bbox = sim::ground_truth_bbox(self.cl.state(), self.cl.scene(), &cam, object)?
            .and_then(|b| b.clamped_to(cam.width, cam.height).ok())
            .ok_or_else(|| err(format!("object `{object}` is not in view")))?;
        self.event(index, "track", ControlEvent::Select(bbox))?;
        if mode == Mode::Collecting {
            self.event(index, "track", ControlEvent::SetMode(Mode::Collecting))?;
        }
        let canvas = (cam.width as f64, cam.height as f64);
        let hold = self.cl.config().servo_mode == ServoMode::Hold;
        let t0 = self.cl.state().t;
        let t0_ms = self.cl.now_ms();
        // frame clock, integer ms, so visibility and capture stamps agree
        let occluded = |ms: u64| {
            let dt = ms.saturating_sub(t0_ms) as f64;
            occlusions.iter().any(|w| dt >= (w[0] * 1000.0).round() && dt < (w[1] * 1000.0).round())
        };
        let mut rep = TrackingReport {
            step: index,
            object: object.to_string(),
            mode,
            frames: 0,
            valid_frames: 0,
            time_to_converge_s: None,
            min_psr: None,
            max_psr: None,
            final_error_x: None,
            max_truth_error_px: None,
            track_lost_events: 0,
            lock_violations: 0,
            session_id: self.cl.collector().map(|c| c.session_id().to_string()),
            captures_accepted: 0,
            captures_attempted: 0,
            captures_during_occlusion: 0,
        };
        let mut servoing = false;
        for _ in 0..self.ticks_for(seconds) {
            let hidden = occluded(self.cl.now_ms());
            self.cl.scene_mut().set_visible(object, !hidden)?;
            let rendered_at = *self.cl.state();
            let out = self.tick()?;
            if let Some(tr) = out.track {
                servoing = true;
                rep.frames += 1;
                if tr.valid {
                    rep.valid_frames += 1;
                    let ex = centroid_error(tr.centroid, canvas).x;
                    rep.final_error_x = Some(ex);
                    if rep.time_to_converge_s.is_none() && ex.abs() < CONVERGED_ERROR {
                        rep.time_to_converge_s = Some(round6(self.cl.state().t - t0));
                    }
                    if tr.psr.is_finite() {
                        rep.min_psr = Some(rep.min_psr.map_or(tr.psr, |m| m.min(tr.psr)));
                        rep.max_psr = Some(rep.max_psr.map_or(tr.psr, |m| m.max(tr.psr)));
                    }
                    let obj = self.cl.scene().object(object)?;
                    let extent = sim::projected_extent(&rendered_at, obj, &cam).filter(|b| b.within_frame(cam.width, cam.height));
                    if let Some(gt) = extent.filter(|_| !hidden) {
                        let (gx, gy) = gt.center();
                        let d = (tr.centroid.0 - gx).hypot(tr.centroid.1 - gy);
                        rep.max_truth_error_px = Some(rep.max_truth_error_px.map_or(d, |m: f64| m.max(d)));
                    }
                }
            }
            if servoing && hold && (out.command.roll != 0.0 || out.command.pitch != 0.0) {
                rep.lock_violations += 1;
            }
            for n in &out.notices {
                match n {
                    Notice::TrackLost { .. } => rep.track_lost_events += 1,
                    Notice::Capture { record } => {
                        rep.captures_accepted += 1;
                        rep.captures_attempted += 1;
                        if occluded(record.ts_ms) {
                            rep.captures_during_occlusion += 1;
                        }
                    }
                    Notice::CaptureRejected { .. } => rep.captures_attempted += 1,
                    _ => {}
                }
            }
        }
        self.cl.scene_mut().set_visible(object, true)?;
        let dir = self.cl.collector().map(|c| c.dir().to_path_buf());
        self.event(index, "track", ControlEvent::SetMode(Mode::Manual))?;
        if let Some(dir) = dir {
            if !dir.join(MANIFEST_FILE).exists() {
                return Err(err("capture session did not finalize".into()));
            }
            self.sessions.push(dir);
        }
        rep.min_psr = rep.min_psr.map(round6);
        rep.max_psr = rep.max_psr.map(round6);
        rep.final_error_x = rep.final_error_x.map(round6);
        rep.max_truth_error_px = rep.max_truth_error_px.map(round6);
        self.tracking.push(rep);
        Ok(true)
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Scripted pilot for `goto`: a proportional velocity target with a
/// velocity-tracking inner loop, expressed as body-frame tilt commands.
#[derive(Debug, Clone, Copy)]
pub struct Pilot {
    pub target: [f64; 3],
    pub tolerance: f64,
    pub speed: f64,
}

impl Pilot {
    const POSITION_GAIN: f64 = 0.8;
    const VELOCITY_GAIN: f64 = 0.5;
    const CLIMB_GAIN: f64 = 1.5;
    const SETTLED_SPEED: f64 = 0.02;

    pub fn arrived(&self, s: &DroneState) -> bool {
        let e = [self.target[0] - s.position[0], self.target[1] - s.position[1], self.target[2] - s.position[2]];
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt() < self.tolerance
            && s.horizontal_speed() < Self::SETTLED_SPEED
            && s.vertical_velocity.abs() < Self::SETTLED_SPEED
    }

    pub fn command(&self, s: &DroneState) -> ControlCommand {
        let ex = self.target[0] - s.position[0];
        let ey = self.target[1] - s.position[1];
        let mut vx = Self::POSITION_GAIN * ex;
        let mut vy = Self::POSITION_GAIN * ey;
        let v = vx.hypot(vy);
        if v > self.speed {
            vx *= self.speed / v;
            vy *= self.speed / v;
        }
        let ux = Self::VELOCITY_GAIN * (vx - s.velocity[0]);
        let uy = Self::VELOCITY_GAIN * (vy - s.velocity[1]);
        let (f, r) = (s.forward(), s.right());
        let pitch = ux * f[0] + uy * f[1];
        let roll = ux * r[0] + uy * r[1];
        let vertical = Self::CLIMB_GAIN * (self.target[2] - s.position[2]);
        ControlCommand::clamped(roll, pitch, vertical, 0.0, 0)
    }
}

/// Options that do not change the report body.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Root for capture sessions; required by `collecting` track steps.
    pub capture_dir: Option<PathBuf>,
}

/// Runs every step of `sc` in simulated time.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    let scene = sc.load_scene()?;
    let cfg = sc.control_config(opts.capture_dir.clone());
    let mut cl = ControlLoop::new(cfg, scene, &sc.name, sc.start_state())?;
    cl.enable_logging(sc.export_period);
    let mut runner = Runner { sc, cl, commands: Vec::new(), tracking: Vec::new(), sessions: Vec::new() };
    let mut steps = Vec::new();
    for (index, step) in sc.steps().enumerate() {
        let start_s = runner.cl.state().t;
        let completed = runner.run_step(index, step)?;
        steps.push(StepReport {
            index,
            action: step.action().to_string(),
            start_s: round6(start_s),
            end_s: round6(runner.cl.state().t),
            completed,
        });
    }
    runner.cl.shutdown();

    let path = runner.cl.flight_log().map(sim::flight_path).unwrap_or_default();
    let vertices: Vec<[f64; 2]> = path_vertices(&path, VERTEX_TOLERANCE).into_iter().map(|(x, y)| [round6(x), round6(y)]).collect();
    let waypoints = runner.sc.waypoints();
    let waypoint_errors_m: Vec<f64> = waypoints
        .iter()
        .map(|w| round6(vertices.iter().map(|v| (v[0] - w[0]).hypot(v[1] - w[1])).fold(f64::INFINITY, f64::min)))
        .collect();
    let max_waypoint_error_m = waypoint_errors_m.iter().copied().fold(0.0, f64::max);
    let max_abs = runner.commands.iter().flat_map(|c| c.command.axes()).map(f64::abs).fold(0.0, f64::max);
    let s = *runner.cl.state();
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: sc.name.clone(),
        seed: sc.seed,
        ticks: runner.cl.tick_count(),
        duration_s: round6(s.t),
        steps,
        tracking: std::mem::take(&mut runner.tracking),
        path: PathReport { samples: path.len(), vertices, waypoints, waypoint_errors_m, max_waypoint_error_m },
        commands: CommandReport { count: runner.commands.len(), max_abs_component: max_abs, within_unit_box: max_abs <= 1.0 },
        final_pose: [round6(s.position[0]), round6(s.position[1]), round6(s.position[2]), round6(s.yaw)],
    };
    Ok(RunOutput { report, path, commands: runner.commands, sessions: runner.sessions })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Reads a scenario file given on stdin or by path; `-` means stdin.
pub fn load_scenario(arg: &str) -> Result<Scenario, HarnessError> {
    if arg == "-" {
        let mut text = String::new();
        for line in io::stdin().lock().lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Scenario::parse(&text, Path::new("."))
    } else {
        Scenario::load(Path::new(arg))
    }
}
