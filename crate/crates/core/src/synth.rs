//! Procedural grayscale test images: smooth shaded backgrounds, overlapping
//! soft-edged shapes and oriented gratings. Used where a natural-image
//! corpus would be, since none ships with the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Number of shapes painted over the background.
    pub shapes: usize,
    /// Fraction of shapes filled with an oriented grating instead of a
    /// smooth ramp.
    pub texture_fraction: f64,
    /// Quantise to 8-bit levels like a stored image.
    pub quantize: bool,
}

impl SynthConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            shapes: 10,
            texture_fraction: 0.3,
            quantize: true,
        }
    }

    pub fn textured(mut self) -> Self {
        self.texture_fraction = 0.8;
        self.shapes = 14;
        self
    }
}

enum Fill {
    Ramp { base: f64, gx: f64, gy: f64 },
    Grating { base: f64, amp: f64, fx: f64, fy: f64, phase: f64 },
}

impl Fill {
    fn value(&self, r: f64, c: f64) -> f64 {
        match *self {
            Fill::Ramp { base, gx, gy } => base + gx * c + gy * r,
            Fill::Grating { base, amp, fx, fy, phase } => base + amp * (fx * c + fy * r + phase).sin(),
        }
    }
}

struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    ellipse: bool,
    fill: Fill,
}

impl Shape {
    /// Signed coverage in [0, 1] with a one-pixel soft edge.
    fn coverage(&self, r: f64, c: f64) -> f64 {
        let (dy, dx) = (r - self.cy, c - self.cx);
        let u = (self.cos * dx + self.sin * dy) / self.rx;
        let v = (-self.sin * dx + self.cos * dy) / self.ry;
        let dist = if self.ellipse {
            ((u * u + v * v).sqrt() - 1.0) * self.rx.min(self.ry)
        } else {
            (u.abs().max(v.abs()) - 1.0) * self.rx.min(self.ry)
        };
        (0.5 - dist).clamp(0.0, 1.0)
    }
}

pub fn synthetic_image<T: Real>(cfg: &SynthConfig, seed: u64) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let scale = h.max(w);

    let base = rng.random_range(0.25..0.75);
    let gx = rng.random_range(-0.4..0.4) / scale;
    let gy = rng.random_range(-0.4..0.4) / scale;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.08),
                rng.random_range(-1.0..1.0) * 6.0 / scale,
                rng.random_range(-1.0..1.0) * 6.0 / scale,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let shapes: Vec<Shape> = (0..cfg.shapes)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let fill = if rng.random_bool(cfg.texture_fraction.clamp(0.0, 1.0)) {
                let period = rng.random_range(2.5..9.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / period;
                Fill::Grating {
                    base: rng.random_range(0.2..0.8),
                    amp: rng.random_range(0.05..0.2),
                    fx: k * theta.cos(),
                    fy: k * theta.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            } else {
                Fill::Ramp {
                    base: rng.random_range(0.05..0.95),
                    gx: rng.random_range(-0.5..0.5) / scale,
                    gy: rng.random_range(-0.5..0.5) / scale,
                }
            };
            Shape {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                ry: rng.random_range(0.06..0.3) * scale,
                rx: rng.random_range(0.06..0.3) * scale,
                cos: angle.cos(),
                sin: angle.sin(),
                ellipse: rng.random_bool(0.5),
                fill,
            }
        })
        .collect();

    Image::from_fn(cfg.height, cfg.width, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let mut v = base + gx * cf + gy * rf;
        for (a, fx, fy, ph) in &waves {
            v += a * (fx * cf + fy * rf + ph).sin();
        }
        for s in &shapes {
            let cov = s.coverage(rf, cf);
            if cov > 0.0 {
                v = (1.0 - cov) * v + cov * s.fill.value(rf, cf);
            }
        }
        let mut v = v.clamp(0.0, 1.0);
        if cfg.quantize {
            v = (v * 255.0).round() / 255.0;
        }
        T::of(v)
    })
}

/// `n` images with consecutive seeds starting at `seed`.
pub fn synthetic_corpus<T: Real>(n: usize, cfg: &SynthConfig, seed: u64) -> Vec<Image<T>> {
    (0..n as u64).map(|i| synthetic_image(cfg, seed.wrapping_add(i))).collect()
}
