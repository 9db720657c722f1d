use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::par;
use crate::real::Real;
use crate::tensor::{conv_analysis, conv_synthesis_into, filter_gradient, CoeffMap, Image};

use super::data::Sample;

/// Squared error summed over pixels.
pub fn loss<T: Real>(x: &Image<T>, x_hat: &Image<T>) -> Result<f64> {
    if x.dims() != x_hat.dims() {
        return Err(Error::shape(format!(
            "loss between {:?} and {:?} images",
            x.dims(),
            x_hat.dims()
        )));
    }
    Ok(x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum())
}

/// Loss of one `(y, x)` pair and its gradient with respect to every
/// parameter, by reverse traversal of the unrolled graph.
///
/// The soft-threshold derivative is 1 where `|u| > τ` and 0 elsewhere
/// (the kink belongs to the zero branch); `∂ST/∂τ = -sign(u)` on the
/// active set. In adaptive mode the threshold gradient is taken with
/// respect to the gains, `∂/∂λ = σ ∂/∂τ`.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    y: &Image<T>,
    x: &Image<T>,
    sigma: Option<f64>,
) -> Result<(f64, ModelParams<T>)> {
    let trace = params.forward_trace(y, sigma)?;
    let value = loss(x, &trace.x_hat)?;
    let (h, w) = y.dims();
    let cfg = params.config;
    let (p, s) = (cfg.filter_size, cfg.stride);
    let mut grads = params.zeros_like();

    let gx = Image::new(
        h,
        w,
        trace
            .x_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| T::of(2.0) * (*a - *b))
            .collect(),
    )?;
    grads.d = filter_gradient(&gx, &trace.z, p, s)?;
    let mut gz = conv_analysis(&gx, &params.d)?;

    let sigma_t = if cfg.adaptive {
        T::of(sigma.unwrap_or(0.0))
    } else {
        T::one()
    };
    let plane = gz.plane_len();
    for k in (0..cfg.k).rev() {
        let layer = &trace.layers[k];
        // Gradient w.r.t. the pre-threshold activation, and w.r.t. τ.
        let mut gu = CoeffMap::zeros(cfg.m, gz.height(), gz.width());
        {
            let gthr = &mut grads.thresholds[k];
            let gu_data = gu.data_mut();
            for j in 0..cfg.m {
                let tau = layer.tau[j];
                let mut acc = T::zero();
                for i in j * plane..(j + 1) * plane {
                    let u = layer.pre.data()[i];
                    if u.abs() > tau {
                        let g = gz.data()[i];
                        gu_data[i] = g;
                        acc -= u.signum() * g;
                    }
                }
                gthr[j] = acc * sigma_t;
            }
        }

        // u = z - Aᵀ r, so the analysis output receives -gu.
        let mut neg = gu.clone();
        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
        grads.a[k] = filter_gradient(&layer.residual, &neg, p, s)?;
        if k == 0 {
            // z⁽⁰⁾ = 0: B⁽⁰⁾ never touches the output.
            break;
        }
        let gr = conv_synthesis_into(&neg, &params.a[k], h, w)?;
        grads.b[k] = filter_gradient(&gr, &layer.z_in, p, s)?;
        let back = conv_analysis(&gr, &params.b[k])?;
        for (g, b) in gu.data_mut().iter_mut().zip(back.data()) {
            *g += *b;
        }
        gz = gu;
    }

    for t in grads.tensors() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", t.name),
                index: 0,
            });
        }
    }
    Ok((value, grads))
}

#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    /// Mean per-image loss.
    pub loss: f64,
    /// Mean per-image gradient.
    pub grads: ModelParams<T>,
}

/// Mean loss and gradient over a batch. Samples are processed in parallel
/// and reduced in sample order, so the result does not depend on the
/// thread count.
pub fn batch_gradient<T: Real>(params: &ModelParams<T>, batch: &[Sample<T>]) -> Result<BatchGradient<T>> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let adaptive = params.config.adaptive;
    let results = par::map_slice(batch, |s| {
        backward(params, &s.y, &s.x, adaptive.then_some(s.sigma))
    });
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        for (acc, part) in total.tensors_mut().into_iter().zip(g.tensors()) {
            for (a, b) in acc.iter_mut().zip(part.data) {
                *a += *b;
            }
        }
    }
    let n = batch.len() as f64;
    let inv = T::of(1.0 / n);
    for t in total.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(BatchGradient {
        loss: loss / n,
        grads: total,
    })
}
