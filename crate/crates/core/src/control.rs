//! The control loop: one actor owning the simulator, tracker, servo and
//! collector, advanced one physics tick at a time.
//!
//! Time is simulated. Physics runs at [`ControlConfig::physics_hz`]; frames
//! are rendered at the camera rate and each frame feeds the tracker, the
//! servo and the collector. Between frames the servo command is held.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{CaptureDecision, CaptureRecord, Collector, CollectorConfig, CollectorError};
use crate::frame::{BoundingBox, GrayFrame};
use crate::servo::{servo_command, ControlCommand, PdConfig, PdState, ServoError, ServoMode, ZeroOrderHold};
use crate::sim::{self, CameraModel, DroneParams, DroneState, FlightLog, Scene, SimError};
use crate::sketch::{bbox_from_stroke, stroke_to_command, CanvasId, NavCommand, SketchConfig, SketchError, Stroke};
use crate::tracker::{MosseTracker, TargetTracker, TrackResult, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Collector(#[from] CollectorError),
    #[error("no frame has been rendered yet")]
    NoFrame,
    #[error("mode `{0}` needs a selected target")]
    NoTarget(Mode),
    #[error("collection needs a capture directory")]
    NoCaptureDir,
    #[error("the vehicle must be flying")]
    NotFlying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Manual,
    Tracking,
    Collecting,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Manual => "manual",
            Mode::Tracking => "tracking",
            Mode::Collecting => "collecting",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightPhase {
    #[default]
    Landed,
    TakingOff,
    Flying,
    Landing,
}

/// Inputs to the loop, from clients or scripts.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlEvent {
    Takeoff,
    Land,
    Stop,
    Go,
    Stroke(Stroke),
    Select(BoundingBox),
    SetMode(Mode),
    /// Raw command vector for the manual channel, replacing all canvases.
    Direct(ControlCommand),
}

/// Outputs of the loop besides the command vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Notice {
    ModeChange { from: Mode, to: Mode, reason: String },
    TrackLost { seq: u64 },
    TrackRecovered { seq: u64 },
    Capture { record: CaptureRecord },
    CaptureRejected { record: CaptureRecord },
    FlightPhase { phase: FlightPhase },
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub physics_hz: f64,
    pub drone: DroneParams,
    pub camera: CameraModel,
    pub tracker: TrackerConfig,
    pub pd: PdConfig,
    pub servo_mode: ServoMode,
    pub sketch: SketchConfig,
    pub collector: CollectorConfig,
    pub capture_dir: Option<PathBuf>,
    pub takeoff_altitude: f64,
    /// Render frames even when nothing consumes them.
    pub always_render: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            physics_hz: 100.0,
            drone: DroneParams::default(),
            camera: CameraModel::default(),
            tracker: TrackerConfig::default(),
            pd: PdConfig::default(),
            servo_mode: ServoMode::Hold,
            sketch: SketchConfig::default(),
            collector: CollectorConfig::default(),
            capture_dir: None,
            takeoff_altitude: 1.0,
            always_render: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureCounts {
    pub attempted: usize,
    pub accepted: usize,
}

/// Snapshot of loop state for clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Telemetry {
    pub tick: u64,
    pub t: f64,
    pub mode: Mode,
    pub phase: FlightPhase,
    pub stopped: bool,
    /// `[x, y, z, yaw]`.
    pub pose: [f64; 4],
    pub roll: f64,
    pub pitch: f64,
    pub velocity: [f64; 3],
    pub command: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub track_valid: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captures: Option<CaptureCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

/// What one tick produced.
#[derive(Debug, Clone, Default)]
pub struct TickOutput {
    pub command: ControlCommand,
    pub frame: Option<Arc<GrayFrame>>,
    pub track: Option<TrackResult>,
    pub notices: Vec<Notice>,
    /// False while landed: the clock advanced but the vehicle did not move.
    pub stepped: bool,
}

pub struct ControlLoop {
    cfg: ControlConfig,
    scene: Scene,
    scene_name: String,
    state: DroneState,
    engine: MosseTracker,
    target: Option<TargetTracker>,
    pd: PdState,
    hold: ZeroOrderHold,
    collector: Option<Collector>,
    last_counts: Option<CaptureCounts>,
    mode: Mode,
    phase: FlightPhase,
    stopped: bool,
    nav: BTreeMap<u8, NavCommand>,
    direct: Option<ControlCommand>,
    tick: u64,
    frames: u64,
    frame: Option<Arc<GrayFrame>>,
    last_command: ControlCommand,
    log: Option<FlightLog>,
    pending: Vec<Notice>,
}

fn canvas_key(c: CanvasId) -> u8 {
    c as u8
}

impl ControlLoop {
    pub fn new(cfg: ControlConfig, scene: Scene, scene_name: &str, start: DroneState) -> Result<Self, ControlError> {
        if !(cfg.physics_hz >= 10.0 && cfg.physics_hz.is_finite()) {
            return Err(SimError::InvalidConfig("physics_hz must be at least 10".into()).into());
        }
        cfg.drone.validate()?;
        cfg.camera.validate()?;
        scene.validate()?;
        let engine = MosseTracker::new(cfg.tracker.clone())?;
        let pd = PdState::new(cfg.pd)?;
        let phase = if start.position[2] > 0.0 { FlightPhase::Flying } else { FlightPhase::Landed };
        Ok(Self {
            cfg,
            scene,
            scene_name: scene_name.to_string(),
            state: start,
            engine,
            target: None,
            pd,
            hold: ZeroOrderHold::new(),
            collector: None,
            last_counts: None,
            mode: Mode::Manual,
            phase,
            stopped: false,
            nav: BTreeMap::new(),
            direct: None,
            tick: 0,
            frames: 0,
            frame: None,
            last_command: ControlCommand::HOVER,
            log: None,
            pending: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControlConfig {
        &self.cfg
    }

    pub fn state(&self) -> &DroneState {
        &self.state
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn scene_mut(&mut self) -> &mut Scene {
        &mut self.scene
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn phase(&self) -> FlightPhase {
        self.phase
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.cfg.physics_hz
    }

    pub fn now_ms(&self) -> u64 {
        (self.tick as f64 * 1000.0 / self.cfg.physics_hz).round() as u64
    }

    pub fn last_frame(&self) -> Option<&Arc<GrayFrame>> {
        self.frame.as_ref()
    }

    pub fn last_track(&self) -> Option<&TrackResult> {
        self.target.as_ref().map(|t| t.last())
    }

    pub fn last_command(&self) -> ControlCommand {
        self.last_command
    }

    pub fn collector(&self) -> Option<&Collector> {
        self.collector.as_ref()
    }

    pub fn enable_logging(&mut self, period_s: f64) {
        let mut log = FlightLog::new(period_s);
        log.record(&self.state);
        self.log = Some(log);
    }

    pub fn flight_log(&self) -> Option<&FlightLog> {
        self.log.as_ref()
    }

    pub fn telemetry(&self) -> Telemetry {
        let s = &self.state;
        let track = self.last_track().filter(|_| self.mode != Mode::Manual);
        let counts = self.collector.as_ref().map(|c| CaptureCounts { attempted: c.manifest().attempted, accepted: c.manifest().accepted });
        Telemetry {
            tick: self.tick,
            t: s.t,
            mode: self.mode,
            phase: self.phase,
            stopped: self.stopped,
            pose: [s.position[0], s.position[1], s.position[2], s.yaw],
            roll: s.roll,
            pitch: s.pitch,
            velocity: [s.velocity[0], s.velocity[1], s.vertical_velocity],
            command: self.last_command.axes(),
            psr: track.map(|t| t.psr).filter(|p| p.is_finite()),
            track_valid: track.map(|t| t.valid),
            captures: counts.or(self.last_counts),
            session_id: self.collector.as_ref().map(|c| c.session_id().to_string()),
        }
    }

    fn set_mode(&mut self, to: Mode, reason: &str) {
        if self.mode == to {
            return;
        }
        let from = self.mode;
        if from == Mode::Collecting {
            self.finish_collection();
        }
        if to == Mode::Manual {
            self.target = None;
            self.pd.reset();
            self.hold = ZeroOrderHold::new();
        }
        self.mode = to;
        self.pending.push(Notice::ModeChange { from, to, reason: reason.to_string() });
    }

    fn finish_collection(&mut self) {
        if let Some(mut c) = self.collector.take() {
            let m = c.manifest();
            self.last_counts = Some(CaptureCounts { attempted: m.attempted, accepted: m.accepted });
            if let Err(e) = c.finalize() {
                self.pending.push(Notice::Error { reason: e.to_string() });
            }
        }
    }

    /// Closes any open collection session; returns its directory.
    pub fn shutdown(&mut self) -> Option<PathBuf> {
        let dir = self.collector.as_ref().map(|c| c.dir().to_path_buf());
        self.set_mode(Mode::Manual, "shutdown");
        dir
    }

    fn select(&mut self, bbox: BoundingBox) -> Result<(), ControlError> {
        let frame = self.frame.clone().ok_or(ControlError::NoFrame)?;
        let tracker = TargetTracker::start(self.engine.clone(), &frame, bbox)?;
        self.target = Some(tracker);
        self.pd.reset();
        self.hold = ZeroOrderHold::new();
        self.stopped = false;
        if self.mode == Mode::Manual {
            self.set_mode(Mode::Tracking, "target selected");
        }
        Ok(())
    }

    /// Applies one event. Errors leave the loop state unchanged.
    pub fn handle(&mut self, event: ControlEvent) -> Result<(), ControlError> {
        match event {
            ControlEvent::Stop => {
                self.stopped = true;
                self.set_mode(Mode::Manual, "stop");
            }
            ControlEvent::Go => self.stopped = false,
            ControlEvent::Takeoff => {
                if matches!(self.phase, FlightPhase::Landed | FlightPhase::Landing) {
                    self.stopped = false;
                    self.set_phase(FlightPhase::TakingOff);
                }
            }
            ControlEvent::Land => {
                self.set_mode(Mode::Manual, "landing");
                self.stopped = false;
                self.nav.clear();
                self.direct = None;
                if self.phase != FlightPhase::Landed {
                    self.set_phase(FlightPhase::Landing);
                }
            }
            ControlEvent::Stroke(stroke) if stroke.canvas == CanvasId::Video => {
                let cam = self.cfg.camera;
                let bbox = bbox_from_stroke(&stroke, cam.width, cam.height)?;
                self.select(bbox)?;
            }
            ControlEvent::Stroke(stroke) => {
                let nav = stroke_to_command(&stroke, &self.cfg.sketch)?;
                if self.stopped {
                    self.nav.clear();
                    self.stopped = false;
                }
                self.set_mode(Mode::Manual, "manual stroke");
                self.direct = None;
                match nav {
                    Some(n) => self.nav.insert(canvas_key(n.canvas), n),
                    None => self.nav.remove(&canvas_key(stroke.canvas)),
                };
            }
            ControlEvent::Direct(cmd) => {
                self.set_mode(Mode::Manual, "manual command");
                self.nav.clear();
                self.stopped = false;
                self.direct = Some(ControlCommand::clamped(cmd.roll, cmd.pitch, cmd.vertical, cmd.yaw_rate, cmd.ts_ms));
            }
            ControlEvent::Select(bbox) => {
                let cam = self.cfg.camera;
                let bbox = bbox.clamped_to(cam.width, cam.height).map_err(TrackerError::from)?;
                self.select(bbox)?;
            }
            ControlEvent::SetMode(Mode::Manual) => self.set_mode(Mode::Manual, "requested"),
            ControlEvent::SetMode(Mode::Tracking) => {
                if self.target.is_none() {
                    return Err(ControlError::NoTarget(Mode::Tracking));
                }
                self.set_mode(Mode::Tracking, "requested");
            }
            ControlEvent::SetMode(Mode::Collecting) => {
                if self.mode == Mode::Collecting {
                    return Ok(());
                }
                if self.target.is_none() {
                    return Err(ControlError::NoTarget(Mode::Collecting));
                }
                let root = self.cfg.capture_dir.clone().ok_or(ControlError::NoCaptureDir)?;
                let mut ccfg = self.cfg.collector;
                ccfg.psr_threshold = ccfg.psr_threshold.max(self.cfg.tracker.psr_threshold);
                self.collector = Some(Collector::open(&root, &self.scene_name, ccfg)?);
                self.set_mode(Mode::Collecting, "requested");
            }
        }
        Ok(())
    }

    /// Like [`handle`](Self::handle), but reports failures as an error notice.
    pub fn submit(&mut self, event: ControlEvent) -> Result<(), String> {
        self.handle(event).map_err(|e| {
            let reason = e.to_string();
            self.pending.push(Notice::Error { reason: reason.clone() });
            reason
        })
    }

    fn set_phase(&mut self, phase: FlightPhase) {
        if self.phase != phase {
            self.phase = phase;
            self.pending.push(Notice::FlightPhase { phase });
        }
    }

    fn manual_command(&self, ts: u64) -> ControlCommand {
        if let Some(d) = self.direct {
            return ControlCommand { ts_ms: ts, ..d };
        }
        let mut axes = [0.0; 4];
        for n in self.nav.values() {
            for (a, v) in axes.iter_mut().zip(n.to_command(ts).axes()) {
                *a += v;
            }
        }
        ControlCommand::clamped(axes[0], axes[1], axes[2], axes[3], ts)
    }

    fn command_for_tick(&mut self, ts: u64) -> ControlCommand {
        let cmd = match self.phase {
            FlightPhase::Landed => ControlCommand::hover(ts),
            FlightPhase::TakingOff => ControlCommand::clamped(0.0, 0.0, 1.0, 0.0, ts),
            FlightPhase::Landing => ControlCommand::clamped(0.0, 0.0, -1.0, 0.0, ts),
            FlightPhase::Flying => match self.mode {
                Mode::Manual => self.manual_command(ts),
                Mode::Tracking | Mode::Collecting => ControlCommand { ts_ms: ts, ..self.hold.tick(None) },
            },
        };
        if self.stopped {
            ControlCommand::hover(ts)
        } else {
            cmd
        }
    }

    fn frame_due(&self) -> bool {
        let fps = self.cfg.camera.fps;
        let t_frame = self.frames as f64 / fps;
        self.tick as f64 / self.cfg.physics_hz + 1e-9 >= t_frame
    }

    /// Advances the simulation by one physics tick.
    pub fn step(&mut self) -> Result<TickOutput, ControlError> {
        let mut out = TickOutput::default();
        let now = self.now_ms();

        if self.frame_due() && (self.cfg.always_render || self.mode != Mode::Manual) {
            let cam = self.cfg.camera;
            let frame = Arc::new(sim::render(&self.state, &self.scene, &cam, self.frames, now));
            self.frames += 1;
            self.frame = Some(Arc::clone(&frame));
            self.process_frame(&frame, &mut out)?;
            out.frame = Some(frame);
        } else if self.frame_due() {
            self.frames += 1;
        }

        let cmd = self.command_for_tick(now);
        let dt = self.dt();
        out.stepped = self.phase != FlightPhase::Landed;
        self.state = if !out.stepped {
            DroneState { t: self.state.t + dt, ..self.state }
        } else {
            sim::step(&self.state, &cmd, dt, &self.cfg.drone)?
        };
        self.tick += 1;
        match self.phase {
            FlightPhase::TakingOff if self.state.position[2] >= self.cfg.takeoff_altitude => self.set_phase(FlightPhase::Flying),
            FlightPhase::Landing if self.state.position[2] <= 0.0 => {
                self.state = sim::settle(&self.state);
                self.set_phase(FlightPhase::Landed);
            }
            _ => {}
        }
        if let Some(log) = self.log.as_mut() {
            log.record(&self.state);
        }
        self.last_command = cmd;
        out.command = cmd;
        out.notices.append(&mut self.pending);
        Ok(out)
    }

    fn process_frame(&mut self, frame: &GrayFrame, out: &mut TickOutput) -> Result<(), ControlError> {
        if self.mode == Mode::Manual {
            return Ok(());
        }
        let Some(target) = self.target.as_mut() else {
            return Ok(());
        };
        let was_valid = target.last().valid;
        let track = target.process(frame);
        out.track = Some(track);
        let canvas = (self.cfg.camera.width as f64, self.cfg.camera.height as f64);
        let servo = servo_command(&track, &mut self.pd, self.cfg.servo_mode, canvas, frame.ts_ms)?;
        self.hold.tick(Some(servo.command));
        if servo.track_lost && was_valid {
            self.pending.push(Notice::TrackLost { seq: frame.seq });
        } else if !servo.track_lost && !was_valid {
            self.pending.push(Notice::TrackRecovered { seq: frame.seq });
        }
        if let Some(c) = self.collector.as_mut() {
            match c.maybe_capture(&track, frame, &self.state) {
                Ok(CaptureDecision::Accepted(record)) => self.pending.push(Notice::Capture { record }),
                Ok(CaptureDecision::Rejected(record)) => self.pending.push(Notice::CaptureRejected { record }),
                Ok(_) => {}
                Err(CollectorError::Paused) => {}
                Err(e) => self.pending.push(Notice::Error { reason: format!("collection paused: {e}") }),
            }
        }
        Ok(())
    }

    /// Runs `n` ticks, collecting notices.
    pub fn run_ticks(&mut self, n: u64) -> Result<Vec<Notice>, ControlError> {
        let mut notices = Vec::new();
        for _ in 0..n {
            notices.extend(self.step()?.notices);
        }
        Ok(notices)
    }
}

impl Drop for ControlLoop {
    fn drop(&mut self) {
        self.finish_collection();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Billboard, Texture};

    fn scene() -> Scene {
        Scene {
            objects: vec![Billboard {
                id: "target".into(),
                center: [0.0, 5.0, 1.0],
                size: [0.6, 0.6],
                facing_deg: 180.0,
                texture: Texture::Noise { seed: 7, period: 24.0, low: 0.0, high: 1.0 },
                visible: true,
            }],
            ..Default::default()
        }
    }

    fn flying() -> ControlLoop {
        ControlLoop::new(ControlConfig::default(), scene(), "test", DroneState::at([0.0, 0.0, 1.0], 0.0)).unwrap()
    }

    fn select_target(cl: &mut ControlLoop) {
        cl.step().unwrap();
        let bbox = sim::ground_truth_bbox(cl.state(), cl.scene(), &cl.config().camera, "target").unwrap().unwrap();
        cl.handle(ControlEvent::Select(bbox)).unwrap();
    }

    #[test]
    fn takeoff_and_land() {
        let mut cl = ControlLoop::new(ControlConfig::default(), scene(), "test", DroneState::default()).unwrap();
        assert_eq!(cl.phase(), FlightPhase::Landed);
        cl.run_ticks(50).unwrap();
        assert_eq!(cl.state().position, [0.0; 3]);
        cl.handle(ControlEvent::Takeoff).unwrap();
        let notices = cl.run_ticks(500).unwrap();
        assert_eq!(cl.phase(), FlightPhase::Flying);
        assert!(notices.contains(&Notice::FlightPhase { phase: FlightPhase::Flying }));
        cl.handle(ControlEvent::Land).unwrap();
        cl.run_ticks(800).unwrap();
        assert_eq!(cl.phase(), FlightPhase::Landed);
        assert_eq!(cl.state().position[2], 0.0);
    }

    #[test]
    fn stroke_persists_until_stop_and_go_resumes() {
        let mut cl = flying();
        let stroke = Stroke::new(CanvasId::Yaw, vec![(10.0, 50.0), (110.0, 50.0)], 200.0, 100.0);
        cl.handle(ControlEvent::Stroke(stroke)).unwrap();
        cl.run_ticks(10).unwrap();
        assert!(cl.last_command().yaw_rate > 0.0);
        cl.handle(ControlEvent::Stop).unwrap();
        let first = cl.step().unwrap().command;
        assert!(first.is_hover());
        cl.handle(ControlEvent::Go).unwrap();
        assert!(cl.step().unwrap().command.yaw_rate > 0.0);
    }

    #[test]
    fn select_engages_tracking_and_stroke_overrides() {
        let mut cl = flying();
        select_target(&mut cl);
        assert_eq!(cl.mode(), Mode::Tracking);
        let mut saw_track = false;
        for _ in 0..20 {
            saw_track |= cl.step().unwrap().track.is_some();
        }
        assert!(saw_track);
        let stroke = Stroke::new(CanvasId::Yaw, vec![(10.0, 50.0), (110.0, 50.0)], 200.0, 100.0);
        cl.handle(ControlEvent::Stroke(stroke)).unwrap();
        assert_eq!(cl.mode(), Mode::Manual);
        assert!(cl.last_track().is_none());
    }

    #[test]
    fn stop_zeroes_within_two_ticks_in_tracking() {
        let mut cl = flying();
        cl.state.yaw = 0.15;
        select_target(&mut cl);
        cl.run_ticks(30).unwrap();
        assert!(!cl.last_command().is_hover());
        cl.handle(ControlEvent::Stop).unwrap();
        assert!(cl.step().unwrap().command.is_hover());
        assert_eq!(cl.mode(), Mode::Manual);
    }

    #[test]
    fn mode_errors() {
        let mut cl = flying();
        assert!(matches!(cl.handle(ControlEvent::SetMode(Mode::Tracking)), Err(ControlError::NoTarget(_))));
        assert!(matches!(cl.handle(ControlEvent::Select(BoundingBox::new(0.0, 0.0, 20.0, 20.0).unwrap())), Err(ControlError::NoFrame)));
        select_target(&mut cl);
        assert!(matches!(cl.handle(ControlEvent::SetMode(Mode::Collecting)), Err(ControlError::NoCaptureDir)));
        assert_eq!(cl.mode(), Mode::Tracking);
    }

    #[test]
    fn telemetry_in_manual_has_no_psr() {
        let cl = flying();
        let t = serde_json::to_value(cl.telemetry()).unwrap();
        assert_eq!(t["mode"], "manual");
        assert!(t.get("psr").is_none());
    }

    #[test]
    fn collecting_writes_a_session() {
        let root = tempfile::tempdir().unwrap();
        let cfg = ControlConfig {
            capture_dir: Some(root.path().to_path_buf()),
            collector: CollectorConfig { block_when_full: true, ..Default::default() },
            ..Default::default()
        };
        let mut cl = ControlLoop::new(cfg, scene(), "test", DroneState::at([0.0, 0.0, 1.0], 0.0)).unwrap();
        select_target(&mut cl);
        cl.handle(ControlEvent::SetMode(Mode::Collecting)).unwrap();
        let notices = cl.run_ticks(300).unwrap();
        let captures = notices.iter().filter(|n| matches!(n, Notice::Capture { .. })).count();
        assert!((2..=4).contains(&captures), "{captures}");
        let dir = cl.shutdown().unwrap();
        assert!(dir.join(crate::collector::MANIFEST_FILE).exists());
        assert_eq!(cl.telemetry().captures.unwrap().accepted, captures);
    }
}
