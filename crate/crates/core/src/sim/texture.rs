//! Procedural textures for billboards, the background and synthetic tracker
//! sequences. Everything here is a pure function of its seed.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::frame::{floor, GrayFrame};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Fractal value noise in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNoise {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave.
    pub period: f64,
    pub octaves: u32,
}

impl ValueNoise {
    pub fn new(seed: u64, period: f64, octaves: u32) -> Self {
        Self { seed, period, octaves: octaves.max(1) }
    }

    fn octave(&self, x: f64, y: f64, period: f64, salt: u64) -> f64 {
        let fx = x / period;
        let fy = y / period;
        let x0 = floor(fx);
        let y0 = floor(fy);
        let tx = smooth(fx - x0);
        let ty = smooth(fy - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let seed = self.seed ^ salt;
        let a = lattice(seed, ix, iy);
        let b = lattice(seed, ix + 1, iy);
        let c = lattice(seed, ix, iy + 1);
        let d = lattice(seed, ix + 1, iy + 1);
        let top = a + (b - a) * tx;
        let bottom = c + (d - c) * tx;
        top + (bottom - top) * ty
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut period = self.period;
        for o in 0..self.octaves {
            total += amp * self.octave(x, y, period, (o as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407));
            norm += amp;
            amp *= 0.5;
            period *= 0.5;
        }
        total / norm
    }

    /// Frame whose pixel `(i, j)` shows the noise at `(i - shift.0, j - shift.1)`,
    /// i.e. content translated by `shift`.
    pub fn frame(&self, width: usize, height: usize, shift: (f64, f64), seq: u64) -> GrayFrame {
        let mut pixels = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                pixels.push(self.eval(i as f64 - shift.0, j as f64 - shift.1) as f32);
            }
        }
        GrayFrame::new(width, height, pixels, seq, seq * 33).expect("non-empty synthetic frame")
    }
}

/// Noise pre-sampled on the integer grid `[0, width) x [0, height)` and read
/// back bilinearly. Rendering samples these instead of hashing per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    width: usize,
    height: usize,
    wrap_x: bool,
    values: Vec<f32>,
}

type TableKey = (u64, u64, u32, usize, usize, bool);

impl NoiseTable {
    pub fn bake(noise: ValueNoise, width: usize, height: usize, wrap_x: bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(noise.eval(i as f64, j as f64) as f32);
            }
        }
        Self { width, height, wrap_x, values }
    }

    /// Shared table for these parameters, baked on first use.
    pub fn cached(noise: ValueNoise, width: usize, height: usize, wrap_x: bool) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<NoiseTable>>>> = OnceLock::new();
        let key = (noise.seed, noise.period.to_bits(), noise.octaves, width, height, wrap_x);
        let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
        Arc::clone(cache.entry(key).or_insert_with(|| Arc::new(Self::bake(noise, width, height, wrap_x))))
    }

    /// Column lookup for `x`: the two lattice indices and the blend weight.
    pub fn column(&self, x: f64) -> (usize, usize, f64) {
        let x0 = floor(x);
        let i = x0 as i64;
        let idx = |k: i64| if self.wrap_x { k.rem_euclid(self.width as i64) } else { k.clamp(0, self.width as i64 - 1) } as usize;
        (idx(i), idx(i + 1), x - x0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row `j` interpolated horizontally at a precomputed column; the first
    /// half of [`sample_column`](Self::sample_column).
    pub fn row_at_column(&self, col: (usize, usize, f64), j: usize) -> f64 {
        let r = &self.values[j * self.width..];
        let (a, b) = (r[col.0] as f64, r[col.1] as f64);
        a + (b - a) * col.2
    }

    /// Bilinear sample with a precomputed [`column`](Self::column).
    pub fn sample_column(&self, col: (usize, usize, f64), y: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let y0 = floor(y);
        let ty = y - y0;
        let j0 = y0 as usize;
        let j1 = (j0 + 1).min(self.height - 1);
        let (r0, r1) = (&self.values[j0 * self.width..], &self.values[j1 * self.width..]);
        let (a, b, c, d) = (r0[col.0] as f64, r0[col.1] as f64, r1[col.0] as f64, r1[col.1] as f64);
        let top = a + (b - a) * col.2;
        let bottom = c + (d - c) * col.2;
        top + (bottom - top) * ty
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let col = self.column(x);
        let y0 = floor(y);
        let ty = y - y0;
        let j = y0 as i64;
        let row = |k: i64| k.clamp(0, self.height as i64 - 1) as usize * self.width;
        let (r0, r1) = (row(j), row(j + 1));
        let v = |k: usize| self.values[k] as f64;
        let (a, b) = (v(r0 + col.0), v(r0 + col.1));
        let (c, d) = (v(r1 + col.0), v(r1 + col.1));
        let top = a + (b - a) * col.2;
        let bottom = c + (d - c) * col.2;
        top + (bottom - top) * ty
    }
}

/// Decoded luminance image used as a billboard texture.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTexture {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl ImageTexture {
    pub fn load(path: &Path) -> Result<Self, image::ImageError> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            pixels: img.pixels().map(|p| p[0] as f32 / 255.0).collect(),
        })
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let x = ((u * self.width as f64) as usize).min(self.width - 1);
        let y = ((v * self.height as f64) as usize).min(self.height - 1);
        self.pixels[y * self.width + x] as f64
    }
}

/// Billboard surface pattern, sampled at normalized `(u, v)` with `u` running
/// left to right and `v` top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Solid { value: f64 },
    Checker { cells: u32, low: f64, high: f64 },
    Rings { rings: u32, low: f64, high: f64 },
    Noise { seed: u64, period: f64, low: f64, high: f64 },
    Image {
        path: String,
        #[serde(skip)]
        data: Option<Arc<ImageTexture>>,
    },
}

/// A texture with its lookup tables resolved, for sampling many pixels.
pub enum TextureSampler<'a> {
    Direct(&'a Texture),
    Table { table: Arc<NoiseTable>, low: f64, high: f64 },
}

impl TextureSampler<'_> {
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        match self {
            TextureSampler::Direct(t) => t.sample(u, v),
            TextureSampler::Table { table, low, high } => low + (high - low) * table.sample(u * 256.0, v * 256.0),
        }
    }
}

impl Texture {
    fn noise_table(seed: u64, period: f64) -> Arc<NoiseTable> {
        // noise lives on a 256-unit canvas so `period` reads in texels
        NoiseTable::cached(ValueNoise::new(seed, period.max(1.0), 3), 257, 257, false)
    }

    pub fn sampler(&self) -> TextureSampler<'_> {
        match self {
            Texture::Noise { seed, period, low, high } => {
                TextureSampler::Table { table: Self::noise_table(*seed, *period), low: *low, high: *high }
            }
            other => TextureSampler::Direct(other),
        }
    }

    pub fn sample(&self, u: f64, v: f64) -> f64 {
        match self {
            Texture::Solid { value } => *value,
            Texture::Checker { cells, low, high } => {
                let n = (*cells).max(1) as f64;
                let cx = (u * n).floor() as i64;
                let cy = (v * n).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    *high
                } else {
                    *low
                }
            }
            Texture::Rings { rings, low, high } => {
                let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt() * 2.0;
                let band = (r * (*rings).max(1) as f64).floor() as i64;
                if band % 2 == 0 {
                    *high
                } else {
                    *low
                }
            }
            Texture::Noise { .. } => self.sampler().sample(u, v),
            Texture::Image { data, .. } => data.as_ref().map_or(0.5, |img| img.sample(u, v)),
        }
    }
}
