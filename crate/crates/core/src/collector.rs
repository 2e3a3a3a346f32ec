//! Confidence-gated image collection at a fixed capture rate.
//!
//! Each session lives in its own directory `session-NNNN` under the capture
//! root. Accepted frames are written there as full-frame 8-bit grayscale PNG
//! files named `frame-<seq>.png`; `manifest.json` is written on finalize.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{BoundingBox, GrayFrame};
use crate::sim::DroneState;
use crate::tracker::TrackResult;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("session {0} is already finalized")]
    AlreadyFinalized(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("collection is paused after a storage failure")]
    Paused,
    #[error("manifest inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    pub interval_ms: u64,
    pub psr_threshold: f64,
    /// Stop the session for good at the first rejected attempt instead of
    /// resuming when the score recovers.
    pub stop_permanently: bool,
    /// Frames that may wait for the writer before capture is deferred.
    pub queue_depth: usize,
    /// Block on a full writer queue instead of deferring. Meant for
    /// simulated-time runs where waiting stalls the simulation, not a robot.
    pub block_when_full: bool,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self { interval_ms: 1000, psr_threshold: 8.0, stop_permanently: false, queue_depth: 8, block_when_full: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    /// Relative to the session directory; absent for rejected attempts.
    pub image_path: Option<String>,
    pub seq: u64,
    pub ts_ms: u64,
    pub bbox: BoundingBox,
    /// `null` in JSON when the score is the infinite sentinel.
    pub psr: Option<f64>,
    /// `[x, y, z, yaw]`.
    pub drone_pose: [f64; 4],
    pub accepted: bool,
}

impl CaptureRecord {
    pub fn score(&self) -> f64 {
        self.psr.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub session_id: String,
    pub scene: String,
    pub threshold: f64,
    pub interval_ms: u64,
    pub attempted: usize,
    pub accepted: usize,
    pub records: Vec<CaptureRecord>,
}

impl Manifest {
    /// Internal consistency: counts match the records, the gate was honored
    /// and accepted captures are spaced at least one interval minus
    /// `slack_ms` apart.
    pub fn verify(&self, slack_ms: u64) -> Result<(), CollectorError> {
        let bad = |m: String| Err(CollectorError::Inconsistent(m));
        if self.attempted != self.records.len() {
            return bad(format!("attempted {} but {} records", self.attempted, self.records.len()));
        }
        let accepted: Vec<&CaptureRecord> = self.records.iter().filter(|r| r.accepted).collect();
        if self.accepted != accepted.len() {
            return bad(format!("accepted {} but {} accepted records", self.accepted, accepted.len()));
        }
        for r in &self.records {
            if r.accepted && (r.score() < self.threshold || r.image_path.is_none()) {
                return bad(format!("record seq {} accepted below threshold or without image", r.seq));
            }
            if !r.accepted && r.image_path.is_some() {
                return bad(format!("rejected record seq {} has an image", r.seq));
            }
        }
        for w in self.records.windows(2) {
            if w[1].seq <= w[0].seq {
                return bad(format!("records out of order at seq {}", w[1].seq));
            }
        }
        for w in accepted.windows(2) {
            if w[1].ts_ms + slack_ms < w[0].ts_ms + self.interval_ms {
                return bad(format!("captures {} and {} too close", w[0].seq, w[1].seq));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CollectorError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Full scan of a finalized session directory: manifest consistency plus
/// every accepted image decoding at the frame resolution with its bbox inside.
pub fn scan_session(dir: &Path, width: u32, height: u32, slack_ms: u64) -> Result<Manifest, CollectorError> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    manifest.verify(slack_ms)?;
    for r in manifest.records.iter().filter(|r| r.accepted) {
        let rel = r.image_path.as_deref().unwrap_or_default();
        let img = image::open(dir.join(rel)).map_err(|e| CollectorError::Inconsistent(format!("{rel}: {e}")))?;
        if img.width() != width || img.height() != height {
            return Err(CollectorError::Inconsistent(format!("{rel}: {}x{} image", img.width(), img.height())));
        }
        if !r.bbox.intersects_frame(width as usize, height as usize) {
            return Err(CollectorError::Inconsistent(format!("{rel}: bbox outside image")));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureDecision {
    NotDue,
    Accepted(CaptureRecord),
    Rejected(CaptureRecord),
    /// Writer queue full; the attempt stays due and is retried next frame.
    Deferred,
    Stopped,
}

struct WriteJob {
    path: PathBuf,
    width: u32,
    height: u32,
    luma: Vec<u8>,
}

fn writer_loop(rx: Receiver<WriteJob>, failure: Arc<Mutex<Option<String>>>) {
    for job in rx {
        let res = image::save_buffer(&job.path, &job.luma, job.width, job.height, image::ExtendedColorType::L8);
        if let Err(e) = res {
            failure.lock().unwrap().get_or_insert(format!("{}: {e}", job.path.display()));
        }
    }
}

/// One collection session. Decisions are made on the caller's thread; PNG
/// encoding happens on a background writer.
pub struct Collector {
    cfg: CollectorConfig,
    dir: PathBuf,
    manifest: Manifest,
    next_due_ms: Option<u64>,
    stopped: bool,
    paused: bool,
    finalized: bool,
    tx: Option<SyncSender<WriteJob>>,
    writer: Option<JoinHandle<()>>,
    failure: Arc<Mutex<Option<String>>>,
}

impl Collector {
    /// Opens a fresh session under `root` with the next unused id.
    pub fn open(root: &Path, scene: &str, cfg: CollectorConfig) -> Result<Self, CollectorError> {
        fs::create_dir_all(root)?;
        let mut last = 0u32;
        for entry in fs::read_dir(root)? {
            let name = entry?.file_name();
            if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("session-")).and_then(|s| s.parse::<u32>().ok()) {
                last = last.max(n);
            }
        }
        let session_id = format!("session-{:04}", last + 1);
        let dir = root.join(&session_id);
        fs::create_dir(&dir)?;

        let (tx, rx) = mpsc::sync_channel(cfg.queue_depth.max(1));
        let failure = Arc::new(Mutex::new(None));
        let f = Arc::clone(&failure);
        let writer = std::thread::Builder::new().name("capture-writer".into()).spawn(move || writer_loop(rx, f))?;

        Ok(Self {
            cfg,
            dir,
            manifest: Manifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                session_id,
                scene: scene.to_string(),
                threshold: cfg.psr_threshold,
                interval_ms: cfg.interval_ms,
                attempted: 0,
                accepted: 0,
                records: Vec::new(),
            },
            next_due_ms: None,
            stopped: false,
            paused: false,
            finalized: false,
            tx: Some(tx),
            writer: Some(writer),
            failure,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.manifest.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    fn check_writer(&mut self) -> Result<(), CollectorError> {
        if let Some(msg) = self.failure.lock().unwrap().clone() {
            self.paused = true;
            return Err(CollectorError::Storage(msg));
        }
        Ok(())
    }

    /// Gate one tracked frame. Attempts happen once per interval of frame
    /// time; an attempt is accepted iff the track is valid and its score
    /// reaches the threshold.
    pub fn maybe_capture(
        &mut self,
        track: &TrackResult,
        frame: &GrayFrame,
        state: &DroneState,
    ) -> Result<CaptureDecision, CollectorError> {
        if self.finalized {
            return Err(CollectorError::AlreadyFinalized(self.manifest.session_id.clone()));
        }
        if self.paused {
            return Err(CollectorError::Paused);
        }
        self.check_writer()?;
        if self.stopped {
            return Ok(CaptureDecision::Stopped);
        }
        let now = frame.ts_ms;
        if self.next_due_ms.is_some_and(|due| now < due) {
            return Ok(CaptureDecision::NotDue);
        }

        let accepted = track.valid && track.psr >= self.cfg.psr_threshold;
        let mut record = CaptureRecord {
            image_path: None,
            seq: frame.seq,
            ts_ms: now,
            bbox: track.bbox,
            psr: track.psr.is_finite().then_some(track.psr),
            drone_pose: [state.position[0], state.position[1], state.position[2], state.yaw],
            accepted,
        };
        if accepted {
            let name = format!("frame-{:06}.png", frame.seq);
            let job = WriteJob {
                path: self.dir.join(&name),
                width: frame.width() as u32,
                height: frame.height() as u32,
                luma: frame.to_luma8(),
            };
            let tx = self.tx.as_ref().expect("writer open");
            let sent = if self.cfg.block_when_full { tx.send(job).map_err(|e| TrySendError::Disconnected(e.0)) } else { tx.try_send(job) };
            match sent {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => return Ok(CaptureDecision::Deferred),
                Err(TrySendError::Disconnected(_)) => {
                    self.paused = true;
                    return Err(CollectorError::Storage("capture writer exited".into()));
                }
            }
            record.image_path = Some(name);
            self.manifest.accepted += 1;
        }
        self.manifest.attempted += 1;
        self.manifest.records.push(record.clone());

        let interval = self.cfg.interval_ms;
        self.next_due_ms = Some(match self.next_due_ms {
            Some(due) if now < due + interval => due + interval,
            _ => now + interval,
        });
        if accepted {
            Ok(CaptureDecision::Accepted(record))
        } else {
            if self.cfg.stop_permanently {
                self.stopped = true;
            }
            Ok(CaptureDecision::Rejected(record))
        }
    }

    fn join_writer(&mut self) {
        self.tx.take();
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
    }

    /// Flushes pending images, verifies the counts and writes the manifest.
    pub fn finalize(&mut self) -> Result<Manifest, CollectorError> {
        if self.finalized {
            return Err(CollectorError::AlreadyFinalized(self.manifest.session_id.clone()));
        }
        self.finalized = true;
        self.join_writer();
        self.check_writer()?;
        self.manifest.verify(0)?;
        let file = fs::File::create(self.dir.join(MANIFEST_FILE))?;
        serde_json::to_writer_pretty(io::BufWriter::new(file), &self.manifest)?;
        Ok(self.manifest.clone())
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        self.join_writer();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u64, ts_ms: u64) -> GrayFrame {
        let mut f = GrayFrame::filled(64, 48, 0.5).unwrap();
        f.seq = seq;
        f.ts_ms = ts_ms;
        f
    }

    fn track(valid: bool) -> TrackResult {
        let bbox = BoundingBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        TrackResult { centroid: bbox.center(), bbox, peak: 0.8, psr: if valid { 20.0 } else { 4.0 }, valid, seq: 0 }
    }

    fn open(root: &Path, cfg: CollectorConfig) -> Collector {
        Collector::open(root, "test", CollectorConfig { block_when_full: true, ..cfg }).unwrap()
    }

    fn run(c: &mut Collector, secs: u64, valid: impl Fn(u64) -> bool) {
        let state = DroneState::default();
        for seq in 0..secs * 30 {
            let ts = seq * 1000 / 30;
            c.maybe_capture(&track(valid(ts)), &frame(seq, ts), &state).unwrap();
        }
    }

    #[test]
    fn ten_seconds_valid_gives_ten_captures() {
        let root = tempfile::tempdir().unwrap();
        let mut c = open(root.path(), CollectorConfig::default());
        run(&mut c, 10, |_| true);
        let m = c.finalize().unwrap();
        assert!((9..=11).contains(&m.accepted), "{}", m.accepted);
        let scanned = scan_session(c.dir(), 64, 48, 34).unwrap();
        assert_eq!(scanned, m);
    }

    #[test]
    fn closed_gate_accepts_nothing_but_logs() {
        let root = tempfile::tempdir().unwrap();
        let mut c = open(root.path(), CollectorConfig::default());
        run(&mut c, 5, |_| false);
        let m = c.finalize().unwrap();
        assert_eq!(m.accepted, 0);
        assert!(m.attempted >= 4);
        assert!(m.records.iter().all(|r| r.image_path.is_none()));
    }

    #[test]
    fn occlusion_window_has_no_captures() {
        let root = tempfile::tempdir().unwrap();
        let mut c = open(root.path(), CollectorConfig::default());
        run(&mut c, 15, |ts| !(5000..10000).contains(&ts));
        let m = c.finalize().unwrap();
        assert!((9..=11).contains(&m.accepted), "{}", m.accepted);
        assert!(m.records.iter().filter(|r| (5000..10000).contains(&r.ts_ms)).all(|r| !r.accepted));
        assert!(m.records.iter().any(|r| !r.accepted));
    }

    #[test]
    fn stop_permanently_halts_after_first_rejection() {
        let root = tempfile::tempdir().unwrap();
        let cfg = CollectorConfig { stop_permanently: true, ..Default::default() };
        let mut c = open(root.path(), cfg);
        run(&mut c, 15, |ts| !(5000..10000).contains(&ts));
        let m = c.finalize().unwrap();
        assert_eq!(m.accepted, 5);
        assert_eq!(m.attempted, 6);
    }

    #[test]
    fn full_queue_defers_instead_of_dropping() {
        let root = tempfile::tempdir().unwrap();
        let cfg = CollectorConfig { interval_ms: 0, queue_depth: 1, ..Default::default() };
        let mut c = Collector::open(root.path(), "test", cfg).unwrap();
        let big = crate::sim::ValueNoise::new(3, 2.0, 1).frame(1024, 1024, (0.0, 0.0), 0);
        let state = DroneState::default();
        let mut deferred = 0;
        for seq in 0..50u64 {
            let mut f = big.clone();
            f.seq = seq;
            f.ts_ms = seq;
            if c.maybe_capture(&track(true), &f, &state).unwrap() == CaptureDecision::Deferred {
                deferred += 1;
            }
        }
        let m = c.finalize().unwrap();
        assert!(deferred > 0);
        assert_eq!(m.accepted + deferred, 50);
        assert!(m.records.iter().all(|r| c.dir().join(r.image_path.as_ref().unwrap()).exists()));
    }

    #[test]
    fn session_lifecycle() {
        let root = tempfile::tempdir().unwrap();
        let mut c = Collector::open(root.path(), "test", CollectorConfig::default()).unwrap();
        let m = c.finalize().unwrap();
        assert_eq!((m.attempted, m.accepted), (0, 0));
        assert!(matches!(c.finalize(), Err(CollectorError::AlreadyFinalized(_))));
        let again = Collector::open(root.path(), "test", CollectorConfig::default()).unwrap();
        assert_eq!(c.session_id(), "session-0001");
        assert_eq!(again.session_id(), "session-0002");
    }

    #[test]
    fn storage_failure_pauses() {
        let root = tempfile::tempdir().unwrap();
        let mut c = Collector::open(root.path(), "test", CollectorConfig::default()).unwrap();
        fs::remove_dir(c.dir()).unwrap();
        let state = DroneState::default();
        c.maybe_capture(&track(true), &frame(0, 0), &state).unwrap();
        let mut saw = false;
        for _ in 0..200 {
            match c.maybe_capture(&track(true), &frame(1, 1), &state) {
                Err(CollectorError::Storage(_)) => {
                    saw = true;
                    break;
                }
                _ => std::thread::sleep(std::time::Duration::from_millis(5)),
            }
        }
        assert!(saw);
        assert!(c.is_paused());
        assert!(matches!(c.maybe_capture(&track(true), &frame(2, 2000), &state), Err(CollectorError::Paused)));
    }

    #[test]
    fn verify_catches_bad_counts() {
        let mut m = Manifest {
            schema_version: 1,
            session_id: "s".into(),
            scene: "x".into(),
            threshold: 8.0,
            interval_ms: 1000,
            attempted: 1,
            accepted: 1,
            records: vec![],
        };
        assert!(m.verify(0).is_err());
        m.records.push(CaptureRecord {
            image_path: Some("a.png".into()),
            seq: 1,
            ts_ms: 0,
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            psr: Some(3.0),
            drone_pose: [0.0; 4],
            accepted: true,
        });
        assert!(m.verify(0).is_err());
        m.records[0].psr = Some(9.0);
        assert!(m.verify(0).is_ok());
    }
}
