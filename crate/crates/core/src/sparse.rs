//! Classical sparse coding: ISTA for the convolutional LASSO
//!
//! ```text
//! minimize_z  0.5 ||D z - y||² + lambda ||z||₁
//! ```
//!
//! and alternating (Gauss-Seidel) dictionary learning on top of it. These are
//! reference solvers: slow, simple, and used to validate the unrolled network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;
use crate::real::{inner, norm_sq, Real};
use crate::tensor::{
    conv_analysis, conv_synthesis_into, filter_gradient, grid_len, project_unit_ball_in_place,
    soft_threshold_in_place, spectral_norm, CoeffMap, FilterBank, Image, PowerIteration,
};

#[derive(Debug, Clone, PartialEq)]
pub enum StepSize {
    /// `1 / ||D Δ_s||²`, the largest step with guaranteed monotone descent.
    Auto,
    Constant(f64),
    /// Per-iteration steps; the last entry repeats once the schedule runs out.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub step: StepSize,
    pub max_iters: usize,
    /// Relative iterate change that counts as converged.
    pub tol: f64,
    /// Keep the objective value after every iteration.
    pub record_objective: bool,
}

impl LassoConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            step: StepSize::Auto,
            max_iters: 1000,
            tol: 1e-6,
            record_objective: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::contract(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::contract("max_iters must be >= 1"));
        }
        let steps: &[f64] = match &self.step {
            StepSize::Auto => &[],
            StepSize::Constant(s) => std::slice::from_ref(s),
            StepSize::Schedule(s) if s.is_empty() => {
                return Err(Error::contract("empty step-size schedule"))
            }
            StepSize::Schedule(s) => s,
        };
        if steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::contract("step sizes must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IstaOutput<T> {
    pub codes: CoeffMap<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when some step exceeded `1 / L`, so monotone descent is not
    /// guaranteed.
    pub step_warning: bool,
    /// Estimated `L = ||D Δ_s||²`.
    pub lipschitz: f64,
    /// Objective after each iteration, if requested.
    pub objective: Vec<f64>,
}

/// Power iteration underestimates the norm; the estimate is inflated by this
/// factor so that the default step never exceeds `1 / L`.
const LIPSCHITZ_MARGIN: f64 = 1.01;

const LIPSCHITZ_POWER: PowerIteration = PowerIteration {
    max_iters: 1000,
    tol: 1e-10,
    seed: 0,
};

/// `L = ||D Δ_s||²` on the coefficient grid of an `h x w` image (a slight
/// overestimate, see [`LIPSCHITZ_MARGIN`]).
pub fn lipschitz_constant<T: Real>(dict: &FilterBank<T>, h: usize, w: usize) -> Result<f64> {
    let s = dict.stride();
    let n = spectral_norm(dict, (grid_len(h, s), grid_len(w, s)), LIPSCHITZ_POWER)?;
    Ok(n * n * LIPSCHITZ_MARGIN)
}

/// ISTA from `z = 0`:
/// `z <- ST(z - eta Dᵀ(D z - y), eta lambda)`.
pub fn ista<T: Real>(y: &Image<T>, dict: &FilterBank<T>, cfg: &LassoConfig) -> Result<IstaOutput<T>> {
    cfg.validate()?;
    let lipschitz = lipschitz_constant(dict, y.height(), y.width())?;
    ista_with_lipschitz(y, dict, cfg, lipschitz)
}

fn ista_with_lipschitz<T: Real>(
    y: &Image<T>,
    dict: &FilterBank<T>,
    cfg: &LassoConfig,
    lipschitz: f64,
) -> Result<IstaOutput<T>> {
    let (h, w) = y.dims();
    let s = dict.stride();
    let step_at = |k: usize| -> f64 {
        match &cfg.step {
            StepSize::Auto => {
                if lipschitz > 0.0 {
                    1.0 / lipschitz
                } else {
                    1.0
                }
            }
            StepSize::Constant(eta) => *eta,
            StepSize::Schedule(etas) => etas[k.min(etas.len() - 1)],
        }
    };
    let limit = if lipschitz > 0.0 { LIPSCHITZ_MARGIN * (1.0 + 1e-9) / lipschitz } else { f64::INFINITY };
    let mut step_warning = false;

    let m = dict.num_filters();
    let mut z = CoeffMap::zeros(m, grid_len(h, s), grid_len(w, s));
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..cfg.max_iters {
        let eta = step_at(k);
        step_warning |= eta > limit;
        let mut residual = conv_synthesis_into(&z, dict, h, w)?;
        for (r, yv) in residual.data_mut().iter_mut().zip(y.data()) {
            *r -= *yv;
        }
        let grad = conv_analysis(&residual, dict)?;
        let mut next = z.clone();
        let eta_t = T::of(eta);
        for (n, g) in next.data_mut().iter_mut().zip(grad.data()) {
            *n -= eta_t * *g;
        }
        let tau = vec![T::of(eta * cfg.lambda); m];
        soft_threshold_in_place(&mut next, &tau)?;
        if !next.is_finite() {
            return Err(Error::non_finite("ista iterate", k));
        }
        let diff: f64 = next
            .data()
            .iter()
            .zip(z.data())
            .map(|(a, b)| (a.f64() - b.f64()).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = norm_sq(next.data()).sqrt();
        z = next;
        iterations = k + 1;
        if cfg.record_objective {
            objective.push(lasso_objective(&z, y, dict, cfg.lambda)?);
        }
        if diff == 0.0 || diff <= cfg.tol * norm {
            converged = true;
            break;
        }
    }
    Ok(IstaOutput {
        codes: z,
        iterations,
        converged,
        step_warning,
        lipschitz,
        objective,
    })
}

/// `0.5 ||D z - y||² + lambda ||z||₁`, accumulated in f64.
pub fn lasso_objective<T: Real>(
    z: &CoeffMap<T>,
    y: &Image<T>,
    dict: &FilterBank<T>,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("lambda {lambda} must be >= 0")));
    }
    let dz = conv_synthesis_into(z, dict, y.height(), y.width())?;
    let fit: f64 = dz
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum();
    let l1: f64 = z.data().iter().map(|v| v.f64().abs()).sum();
    Ok(0.5 * fit + lambda * l1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictShape {
    pub num_filters: usize,
    pub filter_size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DictStep {
    Fixed(f64),
    /// `1 / L_D` with `L_D` re-estimated from the current codes each outer
    /// iteration (see [`dictionary_curvature`]).
    Curvature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictLearnConfig {
    pub shape: DictShape,
    pub lasso: LassoConfig,
    pub outer_iters: usize,
    pub step: DictStep,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DictLearnOutput<T> {
    pub dict: FilterBank<T>,
    /// Summed LASSO objective after each outer iteration.
    pub objective: Vec<f64>,
}

/// Random dictionary with standard-normal filters scaled to unit norm.
pub fn random_dictionary<T: Real>(shape: DictShape, seed: u64) -> FilterBank<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = shape.filter_size * shape.filter_size;
    let mut weights = Vec::with_capacity(shape.num_filters * taps);
    for _ in 0..shape.num_filters {
        let f: Vec<f64> = (0..taps).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        weights.extend(f.iter().map(|v| T::of(v / n)));
    }
    FilterBank::new(shape.num_filters, shape.filter_size, shape.stride, weights)
        .expect("valid dictionary shape")
}

pub fn dict_learn<T: Real>(dataset: &[Image<T>], cfg: &DictLearnConfig) -> Result<DictLearnOutput<T>> {
    dict_learn_from(dataset, random_dictionary(cfg.shape, cfg.seed), cfg)
}

/// Alternates sparse coding of every image with the dictionary fixed and one
/// projected gradient step on the dictionary with the codes fixed.
pub fn dict_learn_from<T: Real>(
    dataset: &[Image<T>],
    init: FilterBank<T>,
    cfg: &DictLearnConfig,
) -> Result<DictLearnOutput<T>> {
    if dataset.is_empty() {
        return Err(Error::contract("dictionary learning needs at least one image"));
    }
    cfg.lasso.validate()?;
    let mut dict = init;
    let mut objective = Vec::with_capacity(cfg.outer_iters);
    for it in 0..cfg.outer_iters {
        let mut lipschitz: Vec<((usize, usize), f64)> = Vec::new();
        for y in dataset {
            if !lipschitz.iter().any(|(dims, _)| *dims == y.dims()) {
                lipschitz.push((y.dims(), lipschitz_constant(&dict, y.height(), y.width())?));
            }
        }
        let coded: Vec<Result<IstaOutput<T>>> = par::map_slice(dataset, |y| {
            let l = lipschitz.iter().find(|(dims, _)| *dims == y.dims()).map_or(0.0, |e| e.1);
            ista_with_lipschitz(y, &dict, &cfg.lasso, l)
        });
        let codes = coded
            .into_iter()
            .map(|r| r.map(|o| o.codes))
            .collect::<Result<Vec<_>>>()?;

        let lr = match cfg.step {
            DictStep::Fixed(lr) => lr,
            DictStep::Curvature => {
                let l = dictionary_curvature(dataset, &codes, cfg.shape)?;
                if l > 0.0 {
                    1.0 / l
                } else {
                    0.0
                }
            }
        };

        let mut grad = vec![0.0f64; dict.weights().len()];
        for (y, z) in dataset.iter().zip(&codes) {
            let mut r = conv_synthesis_into(z, &dict, y.height(), y.width())?;
            for (rv, yv) in r.data_mut().iter_mut().zip(y.data()) {
                *rv -= *yv;
            }
            let g = filter_gradient(&r, z, dict.filter_size(), dict.stride())?;
            for (acc, gv) in grad.iter_mut().zip(g.weights()) {
                *acc += gv.f64();
            }
        }
        for (w, g) in dict.weights_mut().iter_mut().zip(&grad) {
            *w = T::of(w.f64() - lr * g);
        }
        project_unit_ball_in_place(&mut dict);

        let mut total = 0.0;
        for (y, z) in dataset.iter().zip(&codes) {
            total += lasso_objective(z, y, &dict, cfg.lasso.lambda)?;
        }
        if !total.is_finite() {
            return Err(Error::non_finite("dictionary learning objective", it));
        }
        objective.push(total);
    }
    Ok(DictLearnOutput { dict, objective })
}

/// Lipschitz constant of the dictionary gradient of
/// `0.5 sum_i ||D z_i - y_i||²` for fixed codes, by power iteration on the
/// map `w -> sum_i ∂/∂w <W z_i, W z_i> / 2`.
pub fn dictionary_curvature<T: Real>(
    dataset: &[Image<T>],
    codes: &[CoeffMap<T>],
    shape: DictShape,
) -> Result<f64> {
    let taps = shape.filter_size * shape.filter_size;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..shape.num_filters * taps)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= n);
        let bank = FilterBank::new(
            shape.num_filters,
            shape.filter_size,
            shape.stride,
            v.iter().map(|x| T::of(*x)).collect(),
        )?;
        let mut next = vec![0.0f64; v.len()];
        for (y, z) in dataset.iter().zip(codes) {
            let x = conv_synthesis_into(z, &bank, y.height(), y.width())?;
            let g = filter_gradient(&x, z, shape.filter_size, shape.stride)?;
            for (a, b) in next.iter_mut().zip(g.weights()) {
                *a += b.f64();
            }
        }
        let rayleigh = inner(&v, &next);
        v = next;
        let done = (rayleigh - estimate).abs() <= 1e-10 * rayleigh.abs();
        estimate = rayleigh;
        if done {
            break;
        }
    }
    Ok(estimate)
}
