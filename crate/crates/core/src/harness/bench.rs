//! Tracker benchmark on synthetic pure-translation sequences, plus the
//! randomized shift oracle.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frame::{BoundingBox, GrayFrame};
use crate::sim::ValueNoise;
use crate::tracker::{MosseTracker, TargetTracker, TrackResult, TrackerConfig, TrackerError};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub sequences: usize,
    pub frames_per_sequence: usize,
    /// Target drift per frame, pixels.
    pub speed_px: f64,
    /// Randomized single-shift trials for the shift oracle.
    pub shift_trials: usize,
    pub tracker: TrackerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sequences: 8,
            frames_per_sequence: 120,
            speed_px: 0.4,
            shift_trials: 1000,
            tracker: TrackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceResult {
    pub index: usize,
    pub velocity_px: [f64; 2],
    pub frames: usize,
    pub valid_frames: usize,
    pub mean_error_px: f64,
    pub max_error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftOracle {
    pub trials: usize,
    /// Trials with both axes recovered within one pixel.
    pub within_one_px: usize,
    pub fraction: f64,
    pub max_error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub seed: u64,
    pub window: [usize; 2],
    pub sequences: Vec<SequenceResult>,
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub shift_oracle: ShiftOracle,
    /// Wall-clock figures; excluded from the reproducible part.
    pub timing: BenchTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTiming {
    pub updates: usize,
    pub seconds: f64,
    pub updates_per_sec: f64,
}

impl BenchReport {
    /// The report without wall-clock figures, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report is plain data");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("json value") + "\n"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }
}

const FRAME: usize = 192;

fn noise_for(seed: u64) -> ValueNoise {
    ValueNoise::new(seed, 8.0, 3)
}

/// Frames of a noise field drifting at `velocity` pixels per frame.
pub fn translation_sequence(seed: u64, velocity: (f64, f64), frames: usize) -> Vec<GrayFrame> {
    let noise = noise_for(seed);
    (0..frames).map(|k| noise.frame(FRAME, FRAME, (velocity.0 * k as f64, velocity.1 * k as f64), k as u64)).collect()
}

fn start_box(cfg: &TrackerConfig) -> BoundingBox {
    let c = FRAME as f64 / 2.0;
    BoundingBox::from_center(c, c, cfg.window_w as f64, cfg.window_h as f64).expect("window fits the bench frame")
}

/// Shift oracle: train on a noise patch, translate it by a random offset of
/// up to a quarter window per axis, and check the recovered offset.
pub fn shift_oracle(cfg: &TrackerConfig, seed: u64, trials: usize) -> Result<ShiftOracle, TrackerError> {
    let engine = MosseTracker::new(cfg.clone())?;
    let bbox = start_box(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rx, ry) = (cfg.window_w as f64 / 4.0, cfg.window_h as f64 / 4.0);
    let mut within = 0;
    let mut max_err: f64 = 0.0;
    for _ in 0..trials {
        let noise = noise_for(rng.random());
        let shift = (rng.random_range(-rx..=rx), rng.random_range(-ry..=ry));
        let filter = engine.train(&noise.frame(FRAME, FRAME, (0.0, 0.0), 0), &bbox)?;
        let r = engine.track(&filter, &noise.frame(FRAME, FRAME, shift, 1), &TrackResult::from_selection(bbox, 0));
        let (cx, cy) = bbox.center();
        let err = ((r.centroid.0 - cx) - shift.0).abs().max(((r.centroid.1 - cy) - shift.1).abs());
        if err <= 1.0 {
            within += 1;
        }
        max_err = max_err.max(err);
    }
    Ok(ShiftOracle {
        trials,
        within_one_px: within,
        fraction: if trials == 0 { 0.0 } else { within as f64 / trials as f64 },
        max_error_px: round6(max_err),
    })
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Tracks drifting noise sequences and times the track+update cycles.
pub fn bench_tracker(cfg: &BenchConfig) -> Result<BenchReport, TrackerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let engine = MosseTracker::new(cfg.tracker.clone())?;
    let bbox = start_box(&cfg.tracker);
    let mut sequences = Vec::with_capacity(cfg.sequences);
    let mut updates = 0;
    let mut seconds = 0.0;
    for index in 0..cfg.sequences {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let velocity = (cfg.speed_px * angle.cos(), cfg.speed_px * angle.sin());
        let frames = translation_sequence(rng.random(), velocity, cfg.frames_per_sequence.max(1));
        let mut tt = TargetTracker::start(engine.clone(), &frames[0], bbox)?;
        let (cx, cy) = bbox.center();
        let mut sum = 0.0;
        let mut max_err: f64 = 0.0;
        let mut valid = 0;
        let timer = Instant::now();
        for (k, frame) in frames.iter().enumerate().skip(1) {
            let r = tt.process(frame);
            let truth = (cx + velocity.0 * k as f64, cy + velocity.1 * k as f64);
            let e = (r.centroid.0 - truth.0).hypot(r.centroid.1 - truth.1);
            sum += e;
            max_err = max_err.max(e);
            valid += usize::from(r.valid);
        }
        seconds += timer.elapsed().as_secs_f64();
        let n = frames.len() - 1;
        updates += n;
        sequences.push(SequenceResult {
            index,
            velocity_px: [round6(velocity.0), round6(velocity.1)],
            frames: n,
            valid_frames: valid,
            mean_error_px: round6(if n == 0 { 0.0 } else { sum / n as f64 }),
            max_error_px: round6(max_err),
        });
    }
    let total: usize = sequences.iter().map(|s| s.frames).sum();
    let mean = if total == 0 { 0.0 } else { sequences.iter().map(|s| s.mean_error_px * s.frames as f64).sum::<f64>() / total as f64 };
    let max = sequences.iter().map(|s| s.max_error_px).fold(0.0, f64::max);
    Ok(BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        seed: cfg.seed,
        window: [cfg.tracker.window_w, cfg.tracker.window_h],
        sequences,
        mean_error_px: round6(mean),
        max_error_px: max,
        shift_oracle: shift_oracle(&cfg.tracker, cfg.seed, cfg.shift_trials)?,
        timing: BenchTiming { updates, seconds, updates_per_sec: if seconds > 0.0 { updates as f64 / seconds } else { 0.0 } },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig { sequences: 2, frames_per_sequence: 30, shift_trials: 20, ..Default::default() }
    }

    #[test]
    fn drifting_sequence_is_tracked_within_a_pixel() {
        let r = bench_tracker(&small()).unwrap();
        assert!(r.mean_error_px <= 1.0, "{}", r.mean_error_px);
        assert!(r.sequences.iter().all(|s| s.valid_frames == s.frames));
        assert_eq!(r.shift_oracle.trials, 20);
    }

    #[test]
    fn report_body_is_reproducible() {
        let a = bench_tracker(&small()).unwrap();
        let b = bench_tracker(&small()).unwrap();
        assert_eq!(a.deterministic_json(), b.deterministic_json());
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        for key in ["schema_version", "window", "sequences", "mean_error_px", "shift_oracle", "timing"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
