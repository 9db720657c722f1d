use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::conv::{conv_analysis, conv_synthesis};
use super::types::{CoeffMap, FilterBank};
use crate::error::Result;
use crate::real::{norm_sq, Real};

/// Power iteration settings for [`spectral_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub max_iters: usize,
    /// Stop once the relative change of the estimate drops below this.
    pub tol: f64,
    /// Seed of the standard-normal start vector.
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl PowerIteration {
    pub fn precise() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-12,
            seed: 0,
        }
    }
}

/// Largest singular value of the synthesis operator `W Δ_s` acting on
/// `grid.0 x grid.1` coefficient grids, by power iteration on
/// `(Δ_sᵀ Wᵀ)(W Δ_s)`.
pub fn spectral_norm<T: Real>(
    bank: &FilterBank<T>,
    grid: (usize, usize),
    opts: PowerIteration,
) -> Result<f64> {
    let (hs, ws) = grid;
    let m = bank.num_filters();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<T> = (0..m * hs * ws)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::of(v)
        })
        .collect();
    let mut v = CoeffMap::new(m, hs, ws, start)?;
    normalize(&mut v);

    let mut estimate = 0.0f64;
    for _ in 0..opts.max_iters.max(1) {
        let x = conv_synthesis(&v, bank)?;
        // ||W v||^2 for unit v is the Rayleigh quotient of WᵀW.
        let next = norm_sq(x.data()).sqrt();
        let mut w = conv_analysis(&x, bank)?;
        let wn = norm_sq(w.data()).sqrt();
        if wn == 0.0 {
            return Ok(0.0);
        }
        let scale = T::of(1.0 / wn);
        w.data_mut().iter_mut().for_each(|e| *e *= scale);
        v = w;
        let done = (next - estimate).abs() <= opts.tol * next;
        estimate = next;
        if done {
            break;
        }
    }
    Ok(estimate)
}

fn normalize<T: Real>(v: &mut CoeffMap<T>) {
    let n = norm_sq(v.data()).sqrt();
    if n > 0.0 {
        let inv = T::of(1.0 / n);
        v.data_mut().iter_mut().for_each(|e| *e *= inv);
    }
}
