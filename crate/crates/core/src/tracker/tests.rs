use super::*;
use crate::sim::texture::ValueNoise;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(shift: (f64, f64), seq: u64) -> GrayFrame {
    ValueNoise::new(11, 8.0, 3).frame(128, 128, shift, seq)
}

fn center_box() -> BoundingBox {
    BoundingBox::new(32.0, 32.0, 96.0, 96.0).unwrap()
}

fn engine(cfg: TrackerConfig) -> MosseTracker {
    MosseTracker::new(cfg).unwrap()
}

fn offset(r: &TrackResult) -> (f64, f64) {
    (r.centroid.0 - 64.0, r.centroid.1 - 64.0)
}

#[test]
fn rejects_bad_configs() {
    let cfg = TrackerConfig { window_w: 48, ..Default::default() };
    assert!(matches!(MosseTracker::new(cfg), Err(TrackerError::InvalidConfig(_))));
    let cfg = TrackerConfig { training_samples: 0, ..Default::default() };
    assert!(MosseTracker::new(cfg).is_err());
}

#[test]
fn rejects_bad_selections() {
    let t = engine(TrackerConfig::default());
    let frame = textured((0.0, 0.0), 0);
    let outside = BoundingBox::new(100.0, 100.0, 140.0, 140.0).unwrap();
    assert!(matches!(t.train(&frame, &outside), Err(TrackerError::BoxOutsideFrame { .. })));
    let tiny = BoundingBox::new(10.0, 10.0, 17.0, 17.0).unwrap();
    assert!(matches!(t.train(&frame, &tiny), Err(TrackerError::BoxTooSmall { .. })));
}

#[test]
fn self_match_peaks_at_center() {
    let t = engine(TrackerConfig::default());
    let frame = textured((0.0, 0.0), 0);
    let filter = t.train(&frame, &center_box()).unwrap();
    let window = t.sample_window(&frame, (64.0, 64.0), (64.0, 64.0), Perturbation::IDENTITY);
    let response = t.response(&filter, &window).unwrap();
    let (px, py) = argmax(&response, 64);
    assert!((px as i64 - 32).abs() <= 1 && (py as i64 - 32).abs() <= 1, "peak at ({px}, {py})");
}

// Brute-force evaluation of the filter: inverse DFT of A/B to a spatial
// kernel, then circular convolution with the preprocessed window.
fn spatial_response(filter: &CorrelationFilter, prepped: &[f64]) -> Vec<f64> {
    let (w, h) = (filter.window_w, filter.window_h);
    let spectrum = filter.spectrum();
    let mut kernel = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::default();
            for v in 0..h {
                for u in 0..w {
                    let phase = 2.0 * std::f64::consts::PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                    acc += spectrum[v * w + u] * Complex64::from_polar(1.0, phase);
                }
            }
            kernel[y * w + x] = acc.re / (w * h) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..h {
                for kx in 0..w {
                    let sx = (x + w - kx) % w;
                    let sy = (y + h - ky) % h;
                    acc += kernel[ky * w + kx] * prepped[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[test]
fn single_sample_filter_reproduces_desired_output() {
    let cfg = TrackerConfig { window_w: 16, window_h: 16, training_samples: 1, epsilon: 0.0, ..Default::default() };
    let t = engine(cfg);
    let frame = textured((0.0, 0.0), 0);
    let bbox = BoundingBox::new(40.0, 50.0, 56.0, 66.0).unwrap();
    let filter = t.train(&frame, &bbox).unwrap();
    let window = t.sample_window(&frame, bbox.center(), (16.0, 16.0), Perturbation::IDENTITY);
    let prepped = preprocess(&window, &HannWindow::new(16, 16)).unwrap();
    let oracle = spatial_response(&filter, &prepped);
    let fast = t.response(&filter, &window).unwrap();
    for ((o, f), g) in oracle.iter().zip(&fast).zip(t.desired_response()) {
        assert!((o - g).abs() < 1e-9, "oracle {o} vs desired {g}");
        assert!((f - g).abs() < 1e-9, "fft route {f} vs desired {g}");
    }
}

#[test]
fn recovers_known_shift() {
    let t = engine(TrackerConfig::default());
    let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let prev = TrackResult::from_selection(center_box(), 0);
    let r = t.track(&filter, &textured((5.0, 3.0), 1), &prev);
    let (dx, dy) = offset(&r);
    assert!((dx - 5.0).abs() <= 1.0 && (dy - 3.0).abs() <= 1.0, "offset ({dx}, {dy})");
    assert!(r.valid, "psr {}", r.psr);
    assert!(r.bbox.contains(r.centroid.0, r.centroid.1));
    assert_eq!(r.seq, 1);
}

#[test]
fn training_is_deterministic() {
    let frame = textured((0.0, 0.0), 0);
    let a = engine(TrackerConfig::default()).train(&frame, &center_box()).unwrap();
    let b = engine(TrackerConfig::default()).train(&frame, &center_box()).unwrap();
    assert_eq!(a, b);
    let c = engine(TrackerConfig { seed: 1, ..Default::default() }).train(&frame, &center_box()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_learning_rate_leaves_filter_untouched() {
    let t = engine(TrackerConfig { learn_rate: 0.0, ..Default::default() });
    let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let mut updated = filter.clone();
    let frame = textured((2.0, 1.0), 1);
    let r = t.track(&filter, &frame, &TrackResult::from_selection(center_box(), 0));
    assert!(r.valid);
    t.update(&mut updated, &frame, &r);
    assert_eq!(filter, updated);
}

#[test]
fn unit_learning_rate_equals_fresh_training() {
    let cfg = TrackerConfig { learn_rate: 1.0, ..Default::default() };
    let t = engine(cfg.clone());
    let mut filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let frame = textured((0.0, 0.0), 1);
    let result = TrackResult::from_selection(center_box(), 1);
    t.update(&mut filter, &frame, &result);
    let fresh = engine(TrackerConfig { training_samples: 1, ..cfg }).train(&frame, &center_box()).unwrap();
    assert_eq!(filter, fresh);
}

#[test]
fn invalid_results_do_not_update() {
    let t = engine(TrackerConfig::default());
    let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let mut copy = filter.clone();
    let mut r = TrackResult::from_selection(center_box(), 1);
    r.valid = false;
    t.update(&mut copy, &textured((9.0, 9.0), 1), &r);
    assert_eq!(copy, filter);
}

#[test]
fn valid_flag_is_exactly_the_threshold_test() {
    let t = engine(TrackerConfig::default());
    let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let prev = TrackResult::from_selection(center_box(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..20 {
        let shift = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let r = t.track(&filter, &textured(shift, i), &prev);
        assert_eq!(r.valid, r.psr >= 8.0);
    }
}

fn uniform_noise_frame(rng: &mut ChaCha8Rng, seq: u64) -> GrayFrame {
    let pixels = (0..128 * 128).map(|_| rng.random::<f32>()).collect();
    GrayFrame::new(128, 128, pixels, seq, 0).unwrap()
}

#[test]
fn noise_window_is_rejected() {
    let t = engine(TrackerConfig::default());
    let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
    let prev = TrackResult::from_selection(center_box(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scores: Vec<f64> = (0..50).map(|i| t.track(&filter, &uniform_noise_frame(&mut rng, i), &prev).psr).collect();
    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
    assert!(max < 8.0, "noise psr up to {max}");
    // and far below a matched target
    let matched = t.track(&filter, &textured((0.0, 0.0), 1), &prev).psr;
    assert!(matched > 2.0 * max, "matched {matched} vs noise {max}");
}

/// Faint noise background with a textured 48x48 target whose top-left corner is `at`.
fn target_on_background(at: (usize, usize), seq: u64) -> GrayFrame {
    let bg = ValueNoise::new(1, 4.0, 2);
    let fg = ValueNoise::new(2, 6.0, 3);
    let mut pixels = Vec::with_capacity(256 * 128);
    for y in 0..128 {
        for x in 0..256 {
            let inside = x >= at.0 && x < at.0 + 48 && y >= at.1 && y < at.1 + 48;
            let v = if inside {
                fg.eval((x - at.0) as f64, (y - at.1) as f64)
            } else {
                0.5 + 0.02 * (bg.eval(x as f64, y as f64) - 0.5)
            };
            pixels.push(v as f32);
        }
    }
    GrayFrame::new(256, 128, pixels, seq, 0).unwrap()
}

#[test]
fn target_leaving_the_window_invalidates_track() {
    let t = engine(TrackerConfig::default());
    let frame = target_on_background((40, 40), 0);
    let bbox = BoundingBox::new(32.0, 32.0, 96.0, 96.0).unwrap();
    let filter = t.train(&frame, &bbox).unwrap();
    let prev = TrackResult::from_selection(bbox, 0);
    assert!(t.track(&filter, &target_on_background((41, 40), 1), &prev).valid);
    let lost = t.track(&filter, &target_on_background((190, 40), 2), &prev);
    assert!(!lost.valid, "psr {}", lost.psr);
}

#[test]
fn static_scene_does_not_drift() {
    let engine = engine(TrackerConfig::default());
    let frame = textured((0.0, 0.0), 0);
    let mut tracker = TargetTracker::start(engine, &frame, center_box()).unwrap();
    let mut peaks = Vec::new();
    for seq in 1..=100 {
        let mut f = frame.clone();
        f.seq = seq;
        let r = tracker.process(&f);
        assert!(r.valid);
        let (dx, dy) = offset(&r);
        assert!(dx.abs() <= 1.0 && dy.abs() <= 1.0, "drift ({dx}, {dy}) at {seq}");
        peaks.push(r.peak);
    }
    for w in peaks[..50].windows(2) {
        assert!(w[1] >= w[0] - 1e-3, "peak fell from {} to {}", w[0], w[1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_equivariance(dx in -16i32..=16, dy in -16i32..=16) {
        let t = engine(TrackerConfig::default());
        let filter = t.train(&textured((0.0, 0.0), 0), &center_box()).unwrap();
        let r = t.track(&filter, &textured((dx as f64, dy as f64), 1), &TrackResult::from_selection(center_box(), 0));
        let (ox, oy) = offset(&r);
        prop_assert!((ox - dx as f64).abs() <= 1.0 && (oy - dy as f64).abs() <= 1.0, "offset ({}, {})", ox, oy);
    }

    #[test]
    fn brightness_invariance(k in 0.5f32..2.0) {
        let t = engine(TrackerConfig::default());
        let frame = textured((0.0, 0.0), 0);
        let filter = t.train(&frame, &center_box()).unwrap();
        let mut scaled = frame.clone();
        scaled.pixels_mut().iter_mut().for_each(|p| *p *= k);
        let r = t.track(&filter, &scaled, &TrackResult::from_selection(center_box(), 0));
        let (ox, oy) = offset(&r);
        prop_assert!(ox.abs() <= 1.0 && oy.abs() <= 1.0);
    }
}
