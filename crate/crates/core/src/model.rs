//! The unrolled network. Starting from `z⁽⁰⁾ = 0`, each of the `K` layers
//! applies
//!
//! ```text
//! z⁽ᵏ⁺¹⁾ = ST(z⁽ᵏ⁾ - A⁽ᵏ⁾ᵀ(B⁽ᵏ⁾ z⁽ᵏ⁾ - y), τ⁽ᵏ⁾)
//! ```
//!
//! and the output is `x̂ = D z⁽ᴷ⁾`. `A⁽ᵏ⁾`, `B⁽ᵏ⁾` and `D` are strided
//! convolutional filter banks with untied weights. In adaptive mode the
//! stored per-channel vectors are gains `λ⁽ᵏ⁾` and the thresholds become
//! `τ⁽ᵏ⁾ = λ⁽ᵏ⁾ σₙ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{
    conv_analysis_counted, conv_macs, conv_synthesis_counted, grid_len, soft_threshold_in_place,
    spectral_norm, CoeffMap, FilterBank, Image, PowerIteration,
};

/// Initial threshold (non-adaptive) or threshold at the reference noise
/// level (adaptive).
pub const INIT_THRESHOLD: f64 = 1e-2;

/// Image side used when normalising the initial filters by their spectral norm.
pub const INIT_NORM_DOMAIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of unrolled layers.
    pub k: usize,
    /// Number of filters (subbands).
    pub m: usize,
    pub filter_size: usize,
    pub stride: usize,
    /// Thresholds proportional to the input noise level.
    pub adaptive: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// 32 filters, 20 layers, stride 1.
    pub fn small() -> Self {
        Self {
            k: 20,
            m: 32,
            filter_size: 7,
            stride: 1,
            adaptive: false,
            seed: 0,
        }
    }

    /// 169 filters, 30 layers, stride 2.
    pub fn big() -> Self {
        Self {
            k: 30,
            m: 169,
            filter_size: 7,
            stride: 2,
            adaptive: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.filter_size == 0 || self.stride == 0 {
            return Err(Error::contract(format!(
                "model config needs K, M, filter size and stride >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("model.k", self.k);
        kv.set("model.m", self.m);
        kv.set("model.filter_size", self.filter_size);
        kv.set("model.stride", self.stride);
        kv.set("model.adaptive", self.adaptive);
        kv.set("model.seed", self.seed);
    }

    /// Reads `model.*` keys, falling back to `base` for missing ones.
    pub fn from_kv(kv: &KeyValues, base: Self) -> Result<Self> {
        let cfg = Self {
            k: kv.get("model.k")?.unwrap_or(base.k),
            m: kv.get("model.m")?.unwrap_or(base.m),
            filter_size: kv.get("model.filter_size")?.unwrap_or(base.filter_size),
            stride: kv.get("model.stride")?.unwrap_or(base.stride),
            adaptive: kv.get("model.adaptive")?.unwrap_or(base.adaptive),
            seed: kv.get("model.seed")?.unwrap_or(base.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learned parameters. `thresholds[k]` holds `τ⁽ᵏ⁾`, or `λ⁽ᵏ⁾` when the
/// model is adaptive.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub a: Vec<FilterBank<T>>,
    pub b: Vec<FilterBank<T>>,
    pub d: FilterBank<T>,
    pub thresholds: Vec<Vec<T>>,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub x_hat: Image<T>,
    pub z: CoeffMap<T>,
}

/// Per-layer intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// `z⁽ᵏ⁾`
    pub z_in: CoeffMap<T>,
    /// `B⁽ᵏ⁾ z⁽ᵏ⁾ - y`
    pub residual: Image<T>,
    /// Pre-threshold activation `z⁽ᵏ⁾ - A⁽ᵏ⁾ᵀ r⁽ᵏ⁾`.
    pub pre: CoeffMap<T>,
    pub tau: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub layers: Vec<LayerTrace<T>>,
    pub z: CoeffMap<T>,
    pub x_hat: Image<T>,
    /// Multiply-accumulates executed by the convolutions.
    pub macs: u64,
}

impl<T: Real> ModelParams<T> {
    /// One standard-normal filter bank drawn from `cfg.seed`, normalised by
    /// its spectral norm and copied into every `A⁽ᵏ⁾`, `B⁽ᵏ⁾` and `D`.
    /// `sigma_ref` is the noise level at which adaptive thresholds start at
    /// [`INIT_THRESHOLD`] (usually the middle of the training range).
    pub fn init(cfg: ModelConfig, sigma_ref: f64) -> Result<Self> {
        cfg.validate()?;
        let taps = cfg.filter_size * cfg.filter_size;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let raw: Vec<f64> = (0..cfg.m * taps)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let bank = FilterBank::new(cfg.m, cfg.filter_size, cfg.stride, raw)?;
        let grid = grid_len(INIT_NORM_DOMAIN, cfg.stride);
        let norm = spectral_norm(&bank, (grid, grid), PowerIteration::default())?;
        let bank: FilterBank<T> = bank.scaled(1.0 / norm).cast();

        let thr = if cfg.adaptive {
            if !(sigma_ref > 0.0) {
                return Err(Error::contract(format!(
                    "adaptive init needs a positive reference noise level, got {sigma_ref}"
                )));
            }
            INIT_THRESHOLD / sigma_ref
        } else {
            INIT_THRESHOLD
        };
        Ok(Self {
            config: cfg,
            a: vec![bank.clone(); cfg.k],
            b: vec![bank.clone(); cfg.k],
            d: bank,
            thresholds: vec![vec![T::of(thr); cfg.m]; cfg.k],
        })
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let zero_bank = FilterBank::zeros(self.d.num_filters(), self.d.filter_size(), self.d.stride());
        Self {
            config: self.config,
            a: vec![zero_bank.clone(); self.a.len()],
            b: vec![zero_bank.clone(); self.b.len()],
            d: zero_bank,
            thresholds: vec![vec![T::zero(); self.config.m]; self.thresholds.len()],
        }
    }

    pub fn check_geometry(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.a.len() != cfg.k || self.b.len() != cfg.k || self.thresholds.len() != cfg.k {
            return Err(Error::shape(format!("parameters do not have K = {} layers", cfg.k)));
        }
        let ok = |bank: &FilterBank<T>| {
            bank.num_filters() == cfg.m && bank.filter_size() == cfg.filter_size && bank.stride() == cfg.stride
        };
        if !self.a.iter().chain(&self.b).chain(std::iter::once(&self.d)).all(ok) {
            return Err(Error::shape("filter banks disagree with the model config"));
        }
        if self.thresholds.iter().any(|t| t.len() != cfg.m) {
            return Err(Error::shape(format!("threshold vectors must have length M = {}", cfg.m)));
        }
        Ok(())
    }

    pub fn threshold_name(&self) -> &'static str {
        if self.config.adaptive {
            "lambda"
        } else {
            "tau"
        }
    }

    /// Thresholds of layer `k` at noise level `sigma`.
    pub fn thresholds_at(&self, k: usize, sigma: Option<f64>) -> Result<Vec<T>> {
        if k >= self.config.k {
            return Err(Error::contract(format!("layer {k} out of range (K = {})", self.config.k)));
        }
        if !self.config.adaptive {
            return Ok(self.thresholds[k].clone());
        }
        let sigma = match sigma {
            Some(s) if s >= 0.0 => T::of(s),
            Some(s) => return Err(Error::contract(format!("noise level {s} must be >= 0"))),
            None => return Err(Error::contract("adaptive model needs a noise level")),
        };
        Ok(self.thresholds[k].iter().map(|&l| l * sigma).collect())
    }

    pub fn forward(&self, y: &Image<T>, sigma: Option<f64>) -> Result<ForwardOutput<T>> {
        let trace = self.run(y, sigma, false)?;
        Ok(ForwardOutput {
            x_hat: trace.x_hat,
            z: trace.z,
        })
    }

    /// Forward pass that keeps every layer's intermediates.
    pub fn forward_trace(&self, y: &Image<T>, sigma: Option<f64>) -> Result<ForwardTrace<T>> {
        self.run(y, sigma, true)
    }

    fn run(&self, y: &Image<T>, sigma: Option<f64>, keep: bool) -> Result<ForwardTrace<T>> {
        self.check_geometry()?;
        let (h, w) = y.dims();
        let cfg = &self.config;
        let mut z = CoeffMap::zeros(cfg.m, grid_len(h, cfg.stride), grid_len(w, cfg.stride));
        let mut layers = Vec::with_capacity(if keep { cfg.k } else { 0 });
        let mut macs = 0u64;
        for k in 0..cfg.k {
            let tau = self.thresholds_at(k, sigma)?;
            // z⁽⁰⁾ = 0, so the first layer's B⁽⁰⁾ z⁽⁰⁾ term vanishes.
            let residual = if k == 0 {
                y.map(|v| -v)
            } else {
                let (mut bz, n) = conv_synthesis_counted(&z, &self.b[k], h, w)?;
                macs += n;
                for (r, yv) in bz.data_mut().iter_mut().zip(y.data()) {
                    *r -= *yv;
                }
                bz
            };
            let (grad, n) = conv_analysis_counted(&residual, &self.a[k])?;
            macs += n;
            let mut pre = z.clone();
            for (p, g) in pre.data_mut().iter_mut().zip(grad.data()) {
                *p -= *g;
            }
            if !pre.is_finite() {
                return Err(Error::non_finite("activation", k));
            }
            let mut next = pre.clone();
            soft_threshold_in_place(&mut next, &tau)?;
            if keep {
                layers.push(LayerTrace {
                    z_in: std::mem::replace(&mut z, next),
                    residual,
                    pre,
                    tau,
                });
            } else {
                z = next;
            }
        }
        let (x_hat, n) = conv_synthesis_counted(&z, &self.d, h, w)?;
        macs += n;
        Ok(ForwardTrace {
            layers,
            z,
            x_hat,
            macs,
        })
    }

    /// Named tensors in a fixed order: `A.k`, `B.k`, `D`, then the threshold
    /// vectors.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let (m, p) = (self.config.m, self.config.filter_size);
        let mut out = Vec::with_capacity(3 * self.config.k + 1);
        for (k, bank) in self.a.iter().enumerate() {
            out.push(TensorRef {
                name: format!("A.{k}"),
                shape: vec![m, p, p],
                data: bank.weights(),
            });
        }
        for (k, bank) in self.b.iter().enumerate() {
            out.push(TensorRef {
                name: format!("B.{k}"),
                shape: vec![m, p, p],
                data: bank.weights(),
            });
        }
        out.push(TensorRef {
            name: "D".into(),
            shape: vec![m, p, p],
            data: self.d.weights(),
        });
        let tname = self.threshold_name();
        for (k, t) in self.thresholds.iter().enumerate() {
            out.push(TensorRef {
                name: format!("{tname}.{k}"),
                shape: vec![m],
                data: t,
            });
        }
        out
    }

    /// Mutable slices in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(3 * self.config.k + 1);
        out.extend(self.a.iter_mut().map(|b| b.weights_mut()));
        out.extend(self.b.iter_mut().map(|b| b.weights_mut()));
        out.push(self.d.weights_mut());
        out.extend(self.thresholds.iter_mut().map(|t| t.as_mut_slice()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            a: self.a.iter().map(FilterBank::cast).collect(),
            b: self.b.iter().map(FilterBank::cast).collect(),
            d: self.d.cast(),
            thresholds: self
                .thresholds
                .iter()
                .map(|t| t.iter().map(|v| U::of(v.f64())).collect())
                .collect(),
        }
    }
}

/// Exact multiply-accumulate count of one forward pass on a square image of
/// `n_pixels` pixels: `K` analysis and `K - 1` synthesis convolutions in the
/// layers plus the final synthesis by `D`.
pub fn complexity_estimate(cfg: &ModelConfig, n_pixels: usize) -> u64 {
    let side = (n_pixels as f64).sqrt().round() as usize;
    let per_conv = conv_macs(side, side, cfg.filter_size, cfg.stride, cfg.m);
    2 * cfg.k as u64 * per_conv
}

/// Tiles the filters of `bank` into one grayscale image, each filter
/// min-max normalised to `[0, 1]` and separated by a one-pixel black border.
pub fn filter_grid<T: Real>(bank: &FilterBank<T>) -> Image<f64> {
    let m = bank.num_filters();
    let p = bank.filter_size();
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    let cell = p + 1;
    let mut img = Image::zeros(rows * cell + 1, cols * cell + 1);
    for j in 0..m {
        let f = bank.filter(j);
        let lo = f.iter().map(|v| v.f64()).fold(f64::INFINITY, f64::min);
        let hi = f.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let (r0, c0) = (1 + (j / cols) * cell, 1 + (j % cols) * cell);
        for u in 0..p {
            for v in 0..p {
                let val = if hi > lo {
                    (f[u * p + v].f64() - lo) / (hi - lo)
                } else {
                    0.5
                };
                img.set(r0 + u, c0 + v, val);
            }
        }
    }
    img
}
