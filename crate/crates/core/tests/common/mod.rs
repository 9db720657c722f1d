//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the convolution kernels under test.
#![allow(dead_code)]

use cdlnet::{CoeffMap, FilterBank, Image};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_bank(rng: &mut ChaCha8Rng, m: usize, p: usize, s: usize) -> FilterBank<f64> {
    FilterBank::new(m, p, s, normal_vec(rng, m * p * p)).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image<f64> {
    Image::new(h, w, normal_vec(rng, h * w)).unwrap()
}

pub fn random_coeffs(rng: &mut ChaCha8Rng, m: usize, h: usize, w: usize) -> CoeffMap<f64> {
    CoeffMap::new(m, h, w, normal_vec(rng, m * h * w)).unwrap()
}

pub fn grid(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

/// Dense matrix of the analysis operator on an `h x w` image, written out
/// from the definition
/// `z[j, a, b] = Σ_{u,v} w_j[u, v] x[a s + u - c, b s + v - c]`
/// with `c = (p - 1) / 2` and zero padding. Rows index `(j, a, b)`, columns
/// index pixels, both row-major.
pub fn dense_analysis(bank: &FilterBank<f64>, h: usize, w: usize) -> DMatrix<f64> {
    let (m, p, s) = (bank.num_filters(), bank.filter_size(), bank.stride());
    let c = (p as isize - 1) / 2;
    let (hs, ws) = (grid(h, s), grid(w, s));
    let mut mat = DMatrix::zeros(m * hs * ws, h * w);
    for j in 0..m {
        for a in 0..hs {
            for b in 0..ws {
                let row = (j * hs + a) * ws + b;
                for u in 0..p {
                    for v in 0..p {
                        let r = (a * s + u) as isize - c;
                        let col = (b * s + v) as isize - c;
                        if r >= 0 && col >= 0 && (r as usize) < h && (col as usize) < w {
                            mat[(row, r as usize * w + col as usize)] += bank.weights()[(j * p + u) * p + v];
                        }
                    }
                }
            }
        }
    }
    mat
}

pub fn to_vector(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Global minimum of `0.5 ||D z - y||² + λ ||z||₁` by enumerating every
/// support of linearly independent columns and every sign pattern on it,
/// solving the KKT system `D_Sᵀ D_S z_S = D_Sᵀ y - λ sign` and keeping the
/// sign-consistent solutions. Some minimiser always has linearly
/// independent support columns, so the best candidate is the optimum.
pub fn lasso_brute_force(d: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (f64, DVector<f64>) {
    let (n, m) = d.shape();
    assert!(m <= 12, "brute force limited to 12 atoms");
    let objective = |z: &DVector<f64>| 0.5 * (d * z - y).norm_squared() + lambda * z.abs().sum();
    let mut best = (objective(&DVector::zeros(m)), DVector::zeros(m));
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = support.len();
        if k > n {
            continue;
        }
        let ds = d.select_columns(&support);
        let gram = ds.transpose() * &ds;
        let Some(chol) = gram.clone().cholesky() else { continue };
        if gram.determinant().abs() < 1e-12 {
            continue;
        }
        let dty = ds.transpose() * y;
        for signs in 0u32..(1 << k) {
            let sign = DVector::from_fn(k, |i, _| if signs & (1 << i) != 0 { -1.0 } else { 1.0 });
            let zs = chol.solve(&(&dty - lambda * &sign));
            if (0..k).any(|i| zs[i] * sign[i] <= 0.0) {
                continue;
            }
            let mut z = DVector::zeros(m);
            for (i, &j) in support.iter().enumerate() {
                z[j] = zs[i];
            }
            let f = objective(&z);
            if f < best.0 {
                best = (f, z);
            }
        }
    }
    best
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

use cdlnet::model::{ModelConfig, ModelParams};
use cdlnet::training::loss;

/// Parameters with independent random filters (scaled by `scale`) in every
/// bank and thresholds uniform in `thr`.
pub fn random_params(cfg: ModelConfig, seed: u64, scale: f64, thr: (f64, f64)) -> ModelParams<f64> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let bank = |rng: &mut ChaCha8Rng| random_bank(rng, cfg.m, cfg.filter_size, cfg.stride).scaled(scale);
    let a = (0..cfg.k).map(|_| bank(&mut rng)).collect();
    let b = (0..cfg.k).map(|_| bank(&mut rng)).collect();
    let d = bank(&mut rng);
    let thresholds = (0..cfg.k)
        .map(|_| (0..cfg.m).map(|_| rng.random_range(thr.0..thr.1)).collect())
        .collect();
    ModelParams { config: cfg, a, b, d, thresholds }
}

/// Central finite differences of the loss against `grads`, per named tensor:
/// `max |fd - grad| / max |grad|`.
pub fn gradient_check(
    params: &ModelParams<f64>,
    grads: &ModelParams<f64>,
    y: &Image<f64>,
    x: &Image<f64>,
    sigma: Option<f64>,
    h: f64,
) -> Vec<(String, f64, f64)> {
    let eval = |p: &ModelParams<f64>| loss(x, &p.forward(y, sigma).unwrap().x_hat).unwrap();
    let names: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    let mut out = Vec::new();
    for (t, name) in names.into_iter().enumerate() {
        let analytic: Vec<f64> = grads.tensors()[t].data.to_vec();
        let mut worst = 0.0f64;
        for (i, _) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max((fd - analytic[i]).abs());
        }
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        out.push((name, worst / scale.max(1e-300), scale));
    }
    out
}
