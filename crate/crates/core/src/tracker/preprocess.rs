//! Window conditioning applied before every Fourier transform.

use super::TrackerError;

/// Separable raised-cosine (Hann) window, zero on the outermost rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HannWindow {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl HannWindow {
    pub fn new(width: usize, height: usize) -> Self {
        let wx = hann_1d(width);
        let wy = hann_1d(height);
        let weights = wy.iter().flat_map(|&a| wx.iter().map(move |&b| a * b)).collect();
        Self { width, height, weights }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn hann_1d(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                0.0
            } else {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
            }
        })
        .collect()
}

/// Log transform followed by zero-mean, unit-variance normalization.
///
/// A constant patch has no variance to normalize and maps to all zeros.
pub fn normalize(patch: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = patch.iter().map(|p| p.max(0.0).ln_1p()).collect();
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    out.iter_mut().for_each(|v| *v -= mean);
    let var = out.iter().map(|v| v * v).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        out.iter_mut().for_each(|v| *v = 0.0);
    } else {
        out.iter_mut().for_each(|v| *v /= std);
    }
    out
}

/// Normalizes `patch` and applies the Hann window.
pub fn preprocess(patch: &[f64], window: &HannWindow) -> Result<Vec<f64>, TrackerError> {
    let expected = window.width * window.height;
    if patch.len() != expected {
        return Err(TrackerError::DimensionMismatch { expected, actual: patch.len() });
    }
    let mut out = normalize(patch);
    out.iter_mut().zip(&window.weights).for_each(|(v, w)| *v *= w);
    Ok(out)
}
