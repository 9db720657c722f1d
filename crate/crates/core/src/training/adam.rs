use crate::model::ModelParams;
use crate::real::Real;
use crate::tensor::project_unit_ball_in_place;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
    /// Current learning rate (after decay and backtracking).
    pub lr: f64,
    pub config: AdamConfig,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            config: AdamConfig::default(),
        }
    }
}

/// One bias-corrected Adam update followed by [`project_constraints`].
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) {
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let grads = grads.tensors();
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(grads);
    for (((p, m), v), g) in tensors {
        for i in 0..p.len() {
            let gi = g.data[i].f64();
            let mi = beta1 * m[i].f64() + (1.0 - beta1) * gi;
            let vi = beta2 * v[i].f64() + (1.0 - beta2) * gi * gi;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] = T::of(p[i].f64() - update);
        }
    }
    project_constraints(params);
}

/// Unit-ball projection of every filter bank and non-negativity of every
/// threshold. Idempotent.
pub fn project_constraints<T: Real>(params: &mut ModelParams<T>) {
    for bank in params.a.iter_mut().chain(params.b.iter_mut()) {
        project_unit_ball_in_place(bank);
    }
    project_unit_ball_in_place(&mut params.d);
    for t in params.thresholds.iter_mut().flatten() {
        if *t < T::zero() {
            *t = T::zero();
        }
    }
}

/// True when every filter is in the unit ball (up to rounding) and every
/// threshold is non-negative.
pub fn is_feasible<T: Real>(params: &ModelParams<T>) -> bool {
    let slack = 1.0 + 16.0 * T::epsilon().f64();
    let banks_ok = params
        .a
        .iter()
        .chain(&params.b)
        .chain(std::iter::once(&params.d))
        .all(|bank| {
            (0..bank.num_filters()).all(|j| {
                bank.filter(j).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt() <= slack
            })
        });
    banks_ok && params.thresholds.iter().flatten().all(|t| *t >= T::zero())
}
