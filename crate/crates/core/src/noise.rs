//! Blind noise-level estimation.
//!
//! * MAD: `median(|HH|) / 0.6745` on the diagonal subband of a one-level
//!   orthonormal Haar transform. Fast, biased upwards on textured content.
//! * PCA: smallest eigenvalue of the covariance of weakly textured patches.
//!   Patches are ranked by their sample variance; the selection starts from
//!   the lowest-variance tail and is refined to those compatible with the
//!   current estimate until it stops changing.
//!
//! Two corrections keep the PCA estimate unbiased on noise-only patches:
//! the smallest sample eigenvalue sits at the lower Marchenko-Pastur edge
//! `σ²(1 - sqrt(d/n))²`, and selecting patches by variance truncates the
//! chi-square distribution of the noise energy, shrinking it by
//! `F_{d+1}(c) / F_{d-1}(c)`.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Image;

/// `Φ⁻¹(3/4)`: median of `|N(0, 1)|`.
pub const MAD_CONSISTENCY: f64 = 0.6745;

/// Confidence level for keeping a patch as noise-dominated.
const PCA_ACCEPT_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mad,
    Pca,
    GroundTruth,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mad" => Ok(Method::Mad),
            "pca" => Ok(Method::Pca),
            "gt" | "ground-truth" | "ground_truth" => Ok(Method::GroundTruth),
            other => Err(Error::contract(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mad => "mad",
            Method::Pca => "pca",
            Method::GroundTruth => "gt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    pub pca_patch_size: usize,
    pub pca_max_patches: usize,
    /// Fraction of lowest-variance patches that seeds the selection.
    pub pca_tail_fraction: f64,
    pub pca_max_iters: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: Method::Pca,
            pca_patch_size: 7,
            pca_max_patches: 10_000,
            pca_tail_fraction: 0.25,
            pca_max_iters: 10,
        }
    }
}

impl EstimatorConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    /// Method that produced `sigma` (differs from the request on fallback).
    pub method: Method,
    /// Set when PCA had too few patches and MAD was used instead.
    pub fell_back: bool,
}

/// Runs the configured estimator. `ground_truth` is required for
/// [`Method::GroundTruth`] and ignored otherwise.
pub fn estimate<T: Real>(y: &Image<T>, cfg: &EstimatorConfig, ground_truth: Option<f64>) -> Result<NoiseEstimate> {
    match cfg.method {
        Method::Mad => Ok(NoiseEstimate {
            sigma: estimate_mad(y)?,
            method: Method::Mad,
            fell_back: false,
        }),
        Method::Pca => estimate_pca(y, cfg),
        Method::GroundTruth => {
            let sigma = ground_truth
                .ok_or_else(|| Error::contract("ground-truth estimator needs the true noise level"))?;
            Ok(NoiseEstimate {
                sigma,
                method: Method::GroundTruth,
                fell_back: false,
            })
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Diagonal (HH) coefficients of a one-level orthonormal Haar transform.
/// An odd last row or column is dropped.
pub fn haar_diagonal<T: Real>(y: &Image<T>) -> Vec<f64> {
    let (h2, w2) = (y.height() / 2, y.width() / 2);
    let mut out = Vec::with_capacity(h2 * w2);
    for i in 0..h2 {
        for j in 0..w2 {
            let a = y.get(2 * i, 2 * j).f64();
            let b = y.get(2 * i, 2 * j + 1).f64();
            let c = y.get(2 * i + 1, 2 * j).f64();
            let d = y.get(2 * i + 1, 2 * j + 1).f64();
            out.push(0.5 * (a - b - c + d));
        }
    }
    out
}

/// Wavelet MAD estimate of the noise standard deviation.
pub fn estimate_mad<T: Real>(y: &Image<T>) -> Result<f64> {
    if y.height() < 2 || y.width() < 2 {
        return Err(Error::contract(format!(
            "MAD estimation needs at least 2x2 pixels, got {:?}",
            y.dims()
        )));
    }
    let mut hh: Vec<f64> = haar_diagonal(y).into_iter().map(f64::abs).collect();
    Ok(median(&mut hh) / MAD_CONSISTENCY)
}

struct Patches {
    dim: usize,
    data: Vec<f64>,
    texture: Vec<f64>,
}

impl Patches {
    fn extract<T: Real>(y: &Image<T>, p: usize, max_patches: usize) -> Self {
        let (h, w) = y.dims();
        let dim = p * p;
        if h < p || w < p {
            return Self { dim, data: vec![], texture: vec![] };
        }
        let (nr, nc) = (h - p + 1, w - p + 1);
        let total = nr * nc;
        let step = if total > max_patches {
            ((total as f64 / max_patches as f64).sqrt().ceil() as usize).max(1)
        } else {
            1
        };
        let mut data = Vec::new();
        let mut texture = Vec::new();
        for r in (0..nr).step_by(step) {
            for c in (0..nc).step_by(step) {
                let start = data.len();
                for u in 0..p {
                    data.extend(y.row(r + u)[c..c + p].iter().map(|v| v.f64()));
                }
                let patch = &data[start..];
                let mean = patch.iter().sum::<f64>() / dim as f64;
                let var = patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (dim - 1) as f64;
                texture.push(var);
            }
        }
        Self { dim, data, texture }
    }

    fn len(&self) -> usize {
        self.texture.len()
    }

    fn patch(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Smallest eigenvalue of the sample covariance of the selected patches.
    fn min_eigenvalue(&self, selected: &[usize]) -> f64 {
        let d = self.dim;
        let n = selected.len();
        let mut mean = vec![0.0; d];
        for &i in selected {
            for (m, v) in mean.iter_mut().zip(self.patch(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for &i in selected {
            for ((c, v), m) in centered.iter_mut().zip(self.patch(i)).zip(&mean) {
                *c = v - m;
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[(a, b)] += ca * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (n - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }
}

/// Patch-PCA estimate of the noise standard deviation. Falls back to MAD
/// when the image has too few patches for a full-rank covariance.
pub fn estimate_pca<T: Real>(y: &Image<T>, cfg: &EstimatorConfig) -> Result<NoiseEstimate> {
    let p = cfg.pca_patch_size;
    if p < 2 || !(cfg.pca_tail_fraction > 0.0 && cfg.pca_tail_fraction <= 1.0) {
        return Err(Error::contract("PCA estimator needs patch size >= 2 and tail fraction in (0, 1]"));
    }
    let patches = Patches::extract(y, p, cfg.pca_max_patches.max(1));
    let d = patches.dim;
    let n_tail = (cfg.pca_tail_fraction * patches.len() as f64).floor() as usize;
    if n_tail < 2 * d {
        return Ok(NoiseEstimate {
            sigma: estimate_mad(y)?,
            method: Method::Mad,
            fell_back: true,
        });
    }

    let dof = (d - 1) as f64;
    let chi = ChiSquared::new(dof).expect("positive dof");
    let chi_up = ChiSquared::new(dof + 2.0).expect("positive dof");
    // Shrinkage of noise energy for patches whose chi-square statistic is <= c.
    let truncation = |c: f64| -> f64 {
        let kept = chi.cdf(c);
        if kept <= 0.0 {
            1.0
        } else {
            (chi_up.cdf(c) / kept).max(1e-12)
        }
    };
    let edge = |n: usize| (1.0 - (d as f64 / n as f64).sqrt()).powi(2);
    let accept = chi.inverse_cdf(PCA_ACCEPT_QUANTILE) / dof;

    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| patches.texture[a].total_cmp(&patches.texture[b]).then(a.cmp(&b)));
    let tail = &order[..n_tail];

    // Seed: the lowest-variance tail, whose chi-square cut-off is the
    // tail_fraction quantile.
    let mut selected: Vec<usize> = tail.to_vec();
    let mut var = patches.min_eigenvalue(&selected)
        / edge(selected.len())
        / truncation(chi.inverse_cdf(cfg.pca_tail_fraction.min(1.0 - 1e-12)));

    for _ in 0..cfg.pca_max_iters {
        if var <= 0.0 {
            break;
        }
        let threshold = var * accept;
        let count = order.partition_point(|&i| patches.texture[i] <= threshold);
        let (next, cut) = if count < n_tail {
            (tail.to_vec(), patches.texture[tail[n_tail - 1]] * dof / var)
        } else {
            (order[..count].to_vec(), accept * dof)
        };
        let next_var = patches.min_eigenvalue(&next) / edge(next.len()) / truncation(cut);
        let same = next == selected;
        let rel = (next_var - var).abs() / var;
        selected = next;
        var = next_var;
        if same || rel < 1e-6 {
            break;
        }
    }
    Ok(NoiseEstimate {
        sigma: var.max(0.0).sqrt(),
        method: Method::Pca,
        fell_back: false,
    })
}

/// `σ sqrt(2 ln N)`.
pub fn universal_threshold(sigma: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("universal threshold needs N >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::contract(format!("noise level {sigma} must be >= 0")));
    }
    Ok(sigma * (2.0 * (n as f64).ln()).sqrt())
}
