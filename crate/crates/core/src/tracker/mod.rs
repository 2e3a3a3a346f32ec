//! MOSSE adaptive correlation filter.
//!
//! A target is modelled as a pair of Fourier-domain accumulators `A` and `B`.
//! The filter spectrum `A / B` maps a preprocessed window to a response whose
//! peak marks the target; the peak's offset from the window center is the
//! target's motion since the previous frame.
//!
//! Windows are sampled from the frame over a fixed region the size of the
//! initial selection and resampled to `window_w x window_h`.

mod fft;
mod preprocess;
mod psr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{BoundingBox, FrameError, GrayFrame};

pub use fft::Fft2d;
pub use preprocess::{normalize, preprocess, HannWindow};
pub use psr::{argmax, psr, refine_peak, PSR_EXCLUSION};

/// Smallest selection the tracker will train on, in frame pixels.
pub const MIN_TRAIN_AREA: f64 = 64.0;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("window has {actual} pixels, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("response map {width}x{height} is smaller than the 11x11 peak exclusion")]
    ResponseTooSmall { width: usize, height: usize },
    #[error("bounding box area {area:.1} px is below the {MIN_TRAIN_AREA} px minimum")]
    BoxTooSmall { area: f64 },
    #[error("bounding box lies outside the {width}x{height} frame")]
    BoxOutsideFrame { width: usize, height: usize },
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub window_w: usize,
    pub window_h: usize,
    /// Std-dev of the desired Gaussian response, in window pixels.
    pub target_sigma: f64,
    pub learn_rate: f64,
    /// Training samples; the first is the unperturbed selection.
    pub training_samples: usize,
    pub max_rotation_deg: f64,
    /// Relative scale jitter, e.g. 0.05 for +-5%.
    pub max_scale_delta: f64,
    /// Translation jitter in window pixels.
    pub max_translation_px: f64,
    pub epsilon: f64,
    pub psr_threshold: f64,
    pub seed: u64,
    /// Interpolate the response peak below one window pixel.
    pub subpixel: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_w: 64,
            window_h: 64,
            target_sigma: 2.0,
            learn_rate: 0.125,
            training_samples: 8,
            max_rotation_deg: 10.0,
            max_scale_delta: 0.05,
            max_translation_px: 2.0,
            epsilon: 1e-5,
            psr_threshold: 8.0,
            seed: 0,
            subpixel: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidConfig(m.to_string()));
        if !self.window_w.is_power_of_two() || !self.window_h.is_power_of_two() {
            return bad("window dimensions must be powers of two");
        }
        if self.window_w < PSR_EXCLUSION || self.window_h < PSR_EXCLUSION {
            return bad("window must be at least 16x16");
        }
        if !(self.target_sigma > 0.0) {
            return bad("target_sigma must be positive");
        }
        if !(self.learn_rate >= 0.0 && self.learn_rate <= 1.0) {
            return bad("learn_rate must lie in [0, 1]");
        }
        if self.training_samples == 0 {
            return bad("training_samples must be at least 1");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !self.psr_threshold.is_finite() {
            return bad("psr_threshold must be finite");
        }
        Ok(())
    }
}

/// Learned appearance model: Fourier-domain numerator and denominator over a
/// fixed window, plus the frame-space size of the region the window covers.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFilter {
    pub numerator: Vec<Complex64>,
    pub denominator: Vec<Complex64>,
    pub window_w: usize,
    pub window_h: usize,
    pub region_w: f64,
    pub region_h: f64,
    pub target_sigma: f64,
    pub learn_rate: f64,
    pub epsilon: f64,
}

impl CorrelationFilter {
    /// Filter spectrum `A / B`; bins with a zero denominator contribute nothing.
    pub fn spectrum(&self) -> Vec<Complex64> {
        self.numerator
            .iter()
            .zip(&self.denominator)
            .map(|(a, b)| if b.norm_sqr() == 0.0 { Complex64::default() } else { a / b })
            .collect()
    }
}

/// Tracker output for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub centroid: (f64, f64),
    pub bbox: BoundingBox,
    /// Raw response maximum. The desired response peaks at 1.0, so a perfect
    /// match scores close to 1.
    pub peak: f64,
    pub psr: f64,
    pub valid: bool,
    pub seq: u64,
}

impl TrackResult {
    /// Seed result for the frame a selection was made on.
    pub fn from_selection(bbox: BoundingBox, seq: u64) -> Self {
        Self { centroid: bbox.center(), bbox, peak: 1.0, psr: f64::INFINITY, valid: true, seq }
    }
}

/// Small random similarity transform applied to training windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub rotation: f64,
    pub scale: f64,
    /// Offset in window pixels.
    pub shift: (f64, f64),
}

impl Perturbation {
    pub const IDENTITY: Self = Self { rotation: 0.0, scale: 1.0, shift: (0.0, 0.0) };
}

/// Correlation-filter engine: owns the FFT plans, Hann window and desired
/// response for one window size. Filters are plain data passed in and out.
#[derive(Debug, Clone)]
pub struct MosseTracker {
    cfg: TrackerConfig,
    fft: Fft2d,
    hann: HannWindow,
    target: Vec<f64>,
    target_spectrum: Vec<Complex64>,
}

impl MosseTracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let fft = Fft2d::new(cfg.window_w, cfg.window_h);
        let hann = HannWindow::new(cfg.window_w, cfg.window_h);
        let target = gaussian_response(cfg.window_w, cfg.window_h, cfg.target_sigma);
        let target_spectrum = fft.forward_real(&target);
        Ok(Self { cfg, fft, hann, target, target_spectrum })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Desired response: a Gaussian peaking at `(window_w / 2, window_h / 2)`.
    pub fn desired_response(&self) -> &[f64] {
        &self.target
    }

    pub fn fft(&self) -> &Fft2d {
        &self.fft
    }

    /// Samples a `window_w x window_h` grid over a `region_w x region_h` area of
    /// `frame` centered on `center`, with an optional similarity warp.
    pub fn sample_window(
        &self,
        frame: &GrayFrame,
        center: (f64, f64),
        region: (f64, f64),
        warp: Perturbation,
    ) -> Vec<f64> {
        let (w, h) = (self.cfg.window_w, self.cfg.window_h);
        let sx = region.0 / w as f64;
        let sy = region.1 / h as f64;
        let (sin, cos) = warp.rotation.sin_cos();
        let mut out = Vec::with_capacity(w * h);
        for j in 0..h {
            let py = (j as f64 - (h / 2) as f64) * sy;
            for i in 0..w {
                let px = (i as f64 - (w / 2) as f64) * sx;
                let qx = warp.scale * (cos * px - sin * py) + warp.shift.0 * sx;
                let qy = warp.scale * (sin * px + cos * py) + warp.shift.1 * sy;
                out.push(frame.sample_bilinear(center.0 + qx, center.1 + qy));
            }
        }
        out
    }

    /// Preprocessed window spectrum.
    fn window_spectrum(&self, window: &[f64]) -> Result<Vec<Complex64>, TrackerError> {
        let prepped = preprocess(window, &self.hann)?;
        Ok(self.fft.forward_real(&prepped))
    }

    fn check_selection(frame: &GrayFrame, bbox: &BoundingBox) -> Result<(), TrackerError> {
        let (fw, fh) = (frame.width(), frame.height());
        const SLACK: f64 = 1e-6;
        if bbox.x_min < -SLACK || bbox.y_min < -SLACK || bbox.x_max > fw as f64 + SLACK || bbox.y_max > fh as f64 + SLACK {
            return Err(TrackerError::BoxOutsideFrame { width: fw, height: fh });
        }
        if bbox.area() < MIN_TRAIN_AREA {
            return Err(TrackerError::BoxTooSmall { area: bbox.area() });
        }
        Ok(())
    }

    /// Draws the training warps: identity first, then random jitter.
    pub fn perturbations(&self) -> Vec<Perturbation> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let rot = self.cfg.max_rotation_deg.to_radians();
        let mut out = vec![Perturbation::IDENTITY];
        for _ in 1..self.cfg.training_samples {
            out.push(Perturbation {
                rotation: symmetric(&mut rng, rot),
                scale: 1.0 + symmetric(&mut rng, self.cfg.max_scale_delta),
                shift: (
                    symmetric(&mut rng, self.cfg.max_translation_px),
                    symmetric(&mut rng, self.cfg.max_translation_px),
                ),
            });
        }
        out
    }

    /// Trains a filter on the region of `frame` inside `bbox`.
    pub fn train(&self, frame: &GrayFrame, bbox: &BoundingBox) -> Result<CorrelationFilter, TrackerError> {
        Self::check_selection(frame, bbox)?;
        let region = (bbox.width(), bbox.height());
        let center = bbox.center();
        let n = self.fft.len();
        let mut numerator = vec![Complex64::default(); n];
        let mut denominator = vec![Complex64::default(); n];
        let (w, h) = (self.cfg.window_w, self.cfg.window_h);
        let (sx, sy) = (region.0 / w as f64, region.1 / h as f64);
        for warp in self.perturbations() {
            let spectrum = self.window_spectrum(&self.sample_window(frame, center, region, warp))?;
            // the desired peak follows the target center through the warp
            let shifted;
            let target = if warp.shift == (0.0, 0.0) {
                &self.target_spectrum
            } else {
                let (sin, cos) = warp.rotation.sin_cos();
                let (qx, qy) = (warp.shift.0 * sx, warp.shift.1 * sy);
                let ux = -(cos * qx + sin * qy) / (warp.scale * sx);
                let uy = -(-sin * qx + cos * qy) / (warp.scale * sy);
                let peak = ((w / 2) as f64 + ux, (h / 2) as f64 + uy);
                shifted = self.fft.forward_real(&gaussian_response_at(w, h, self.cfg.target_sigma, peak));
                &shifted
            };
            for k in 0..n {
                numerator[k] += target[k] * spectrum[k].conj();
                denominator[k] += spectrum[k] * spectrum[k].conj();
            }
        }
        denominator.iter_mut().for_each(|b| b.re += self.cfg.epsilon);
        Ok(CorrelationFilter {
            numerator,
            denominator,
            window_w: self.cfg.window_w,
            window_h: self.cfg.window_h,
            region_w: region.0,
            region_h: region.1,
            target_sigma: self.cfg.target_sigma,
            learn_rate: self.cfg.learn_rate,
            epsilon: self.cfg.epsilon,
        })
    }

    /// Correlation response of `filter` against a raw (unpreprocessed) window.
    pub fn response(&self, filter: &CorrelationFilter, window: &[f64]) -> Result<Vec<f64>, TrackerError> {
        let spectrum = self.window_spectrum(window)?;
        let mut product: Vec<Complex64> =
            filter.spectrum().iter().zip(&spectrum).map(|(h, f)| h * f).collect();
        self.fft.inverse(&mut product);
        Ok(product.into_iter().map(|c| c.re).collect())
    }

    /// Locates the target in `frame`, searching around `prev.centroid`.
    /// Loss of track is reported through `valid`, never as an error.
    pub fn track(&self, filter: &CorrelationFilter, frame: &GrayFrame, prev: &TrackResult) -> TrackResult {
        self.track_with_response(filter, frame, prev).0
    }

    pub fn track_with_response(
        &self,
        filter: &CorrelationFilter,
        frame: &GrayFrame,
        prev: &TrackResult,
    ) -> (TrackResult, Vec<f64>) {
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        let center = clamp_point(prev.centroid, fw, fh);
        let region = (filter.region_w, filter.region_h);
        let window = self.sample_window(frame, center, region, Perturbation::IDENTITY);
        let response = self
            .response(filter, &window)
            .expect("window sampled at the filter's own dimensions");

        let (w, h) = (self.cfg.window_w, self.cfg.window_h);
        let (px, py) = argmax(&response, w);
        let peak = response[py * w + px];
        let score = psr(&response, w, h, (px, py)).expect("window is at least 16x16");
        let (fx, fy) = if self.cfg.subpixel { refine_peak(&response, w, h, (px, py)) } else { (px as f64, py as f64) };
        let dx = (fx - (w / 2) as f64) * region.0 / w as f64;
        let dy = (fy - (h / 2) as f64) * region.1 / h as f64;
        let centroid = clamp_point((center.0 + dx, center.1 + dy), fw, fh);
        let bbox = BoundingBox::from_center(centroid.0, centroid.1, region.0, region.1)
            .and_then(|b| b.clamped_to(frame.width(), frame.height()))
            .unwrap_or(prev.bbox);
        let result = TrackResult {
            centroid,
            bbox,
            peak,
            psr: score,
            valid: score >= self.cfg.psr_threshold,
            seq: frame.seq,
        };
        (result, response)
    }

    /// Running-average update from the window at `result.centroid`. Skipped
    /// when the result is not valid.
    pub fn update(&self, filter: &mut CorrelationFilter, frame: &GrayFrame, result: &TrackResult) {
        if !result.valid {
            return;
        }
        let region = (filter.region_w, filter.region_h);
        let window = self.sample_window(frame, result.centroid, region, Perturbation::IDENTITY);
        let spectrum = self.window_spectrum(&window).expect("window sampled at the filter's own dimensions");
        let eta = filter.learn_rate;
        let keep = 1.0 - eta;
        for k in 0..spectrum.len() {
            let a = self.target_spectrum[k] * spectrum[k].conj();
            let mut b = spectrum[k] * spectrum[k].conj();
            b.re += filter.epsilon;
            filter.numerator[k] = a * eta + filter.numerator[k] * keep;
            filter.denominator[k] = b * eta + filter.denominator[k] * keep;
        }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

fn clamp_point(p: (f64, f64), width: f64, height: f64) -> (f64, f64) {
    (p.0.clamp(0.0, width), p.1.clamp(0.0, height))
}

/// Gaussian of std `sigma` centered at `(width / 2, height / 2)`, peak value 1.
pub fn gaussian_response(width: usize, height: usize, sigma: f64) -> Vec<f64> {
    gaussian_response_at(width, height, sigma, ((width / 2) as f64, (height / 2) as f64))
}

pub fn gaussian_response_at(width: usize, height: usize, sigma: f64, (cx, cy): (f64, f64)) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                (-d2 / denom).exp()
            })
        })
        .collect()
}

/// A single target under track: the filter, the latest result, and the last
/// position the tracker was confident about.
#[derive(Debug, Clone)]
pub struct TargetTracker {
    engine: MosseTracker,
    filter: CorrelationFilter,
    last: TrackResult,
    anchor: TrackResult,
}

impl TargetTracker {
    pub fn start(engine: MosseTracker, frame: &GrayFrame, bbox: BoundingBox) -> Result<Self, TrackerError> {
        let filter = engine.train(frame, &bbox)?;
        let seed = TrackResult::from_selection(bbox, frame.seq);
        Ok(Self { engine, filter, last: seed, anchor: seed })
    }

    /// Tracks one frame and adapts the filter when the result is valid. An
    /// invalid result leaves the search anchored at the last valid position.
    pub fn process(&mut self, frame: &GrayFrame) -> TrackResult {
        let result = self.engine.track(&self.filter, frame, &self.anchor);
        if result.valid {
            self.engine.update(&mut self.filter, frame, &result);
            self.anchor = result;
        }
        self.last = result;
        result
    }

    pub fn last(&self) -> &TrackResult {
        &self.last
    }

    pub fn filter(&self) -> &CorrelationFilter {
        &self.filter
    }

    pub fn engine(&self) -> &MosseTracker {
        &self.engine
    }
}

#[cfg(test)]
mod tests;
