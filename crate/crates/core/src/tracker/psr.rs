//! Peak-to-sidelobe ratio of a correlation response.

use super::TrackerError;

/// Side length of the square excluded around the peak.
pub const PSR_EXCLUSION: usize = 11;

/// `(peak - mean(sidelobe)) / std(sidelobe)`, where the sidelobe is every value
/// outside an 11x11 square centered on `peak` (clipped at the map border).
///
/// Returns `f64::INFINITY` when the sidelobe is perfectly flat and the peak
/// stands above it, and `0.0` for a completely flat map.
pub fn psr(response: &[f64], width: usize, height: usize, peak: (usize, usize)) -> Result<f64, TrackerError> {
    if width < PSR_EXCLUSION || height < PSR_EXCLUSION || response.len() != width * height {
        return Err(TrackerError::ResponseTooSmall { width, height });
    }
    let half = PSR_EXCLUSION / 2;
    let (px, py) = peak;
    let x_lo = px.saturating_sub(half);
    let x_hi = (px + half).min(width - 1);
    let y_lo = py.saturating_sub(half);
    let y_hi = (py + half).min(height - 1);

    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..height {
        let row_excluded = y >= y_lo && y <= y_hi;
        for x in 0..width {
            if row_excluded && x >= x_lo && x <= x_hi {
                continue;
            }
            let v = response[y * width + x];
            count += 1;
            sum += v;
            sum_sq += v * v;
        }
    }
    let peak_value = response[py * width + px];
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let std = var.sqrt();
    if std == 0.0 {
        // flat sidelobe: an isolated peak is infinitely sharp, a flat map has no peak
        return Ok(if peak_value > mean { f64::INFINITY } else { 0.0 });
    }
    Ok((peak_value - mean) / std)
}

/// Index of the maximum, ties resolved to the lowest `(y, x)`.
pub fn argmax(response: &[f64], width: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in response.iter().enumerate() {
        if v > response[best] {
            best = i;
        }
    }
    (best % width, best / width)
}

/// Sub-pixel peak position by fitting a parabola through the peak and its
/// two neighbors along each axis (indices wrap, as the response is circular).
/// The correction per axis is limited to half a pixel.
pub fn refine_peak(response: &[f64], width: usize, height: usize, peak: (usize, usize)) -> (f64, f64) {
    let at = |x: usize, y: usize| response[y * width + x];
    let (px, py) = peak;
    let fit = |l: f64, c: f64, r: f64| {
        let curvature = l - 2.0 * c + r;
        if curvature < 0.0 {
            (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let c = at(px, py);
    let dx = fit(at((px + width - 1) % width, py), c, at((px + 1) % width, py));
    let dy = fit(at(px, (py + height - 1) % height), c, at(px, (py + 1) % height));
    (px as f64 + dx, py as f64 + dy)
}
