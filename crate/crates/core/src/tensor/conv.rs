use std::sync::atomic::{AtomicU64, Ordering};

use super::types::{CoeffMap, FilterBank, Image};
use crate::error::{Error, Result};
use crate::par;
use crate::real::{axpy, dot, Real};

/// Coefficient-grid length for `n` samples at `stride`.
pub fn grid_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Grid indices `b` in `[lo, hi)` with `b < n_grid` and `0 <= b*s + off < n_in`.
#[inline]
fn valid_range(n_grid: usize, n_in: usize, s: usize, off: isize) -> (usize, usize) {
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(s)
    } else {
        0
    };
    let last = n_in as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / s + 1).min(n_grid)
    };
    (lo, hi.max(lo))
}

#[inline]
fn tap_offset(tap: usize, center: usize) -> isize {
    tap as isize - center as isize
}

fn check_finite_image<T: Real>(x: &Image<T>) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite("convolution input image", 0))
    }
}

fn check_finite_coeffs<T: Real>(z: &CoeffMap<T>) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite("convolution input coefficients", 0))
    }
}

/// Analysis convolution `Δ_sᵀ Wᵀ x`: per-channel zero-padded correlation
/// with each filter, sampled on the stride grid.
pub fn conv_analysis<T: Real>(x: &Image<T>, bank: &FilterBank<T>) -> Result<CoeffMap<T>> {
    analysis_impl(x, bank, None)
}

/// [`conv_analysis`] that also returns the number of multiply-accumulates
/// actually executed.
pub fn conv_analysis_counted<T: Real>(
    x: &Image<T>,
    bank: &FilterBank<T>,
) -> Result<(CoeffMap<T>, u64)> {
    let counter = AtomicU64::new(0);
    let z = analysis_impl(x, bank, Some(&counter))?;
    Ok((z, counter.into_inner()))
}

fn analysis_impl<T: Real>(
    x: &Image<T>,
    bank: &FilterBank<T>,
    counter: Option<&AtomicU64>,
) -> Result<CoeffMap<T>> {
    check_finite_image(x)?;
    let (h, w) = x.dims();
    let s = bank.stride();
    let p = bank.filter_size();
    let c = bank.center();
    let m = bank.num_filters();
    let (hs, ws) = (grid_len(h, s), grid_len(w, s));
    let mut out = CoeffMap::zeros(m, hs, ws);

    par::for_each_chunk(out.data_mut(), ws, |i, out_row| {
        let (j, a) = (i / hs, i % hs);
        let filt = bank.filter(j);
        let mut macs = 0u64;
        for u in 0..p {
            let r = (a * s) as isize + tap_offset(u, c);
            if r < 0 || r >= h as isize {
                continue;
            }
            let xrow = x.row(r as usize);
            for v in 0..p {
                let wt = filt[u * p + v];
                let off = tap_offset(v, c);
                let (lo, hi) = valid_range(ws, w, s, off);
                if lo >= hi {
                    continue;
                }
                macs += (hi - lo) as u64;
                if s == 1 {
                    let start = (lo as isize + off) as usize;
                    axpy(wt, &xrow[start..start + hi - lo], &mut out_row[lo..hi]);
                } else {
                    for b in lo..hi {
                        out_row[b] += wt * xrow[((b * s) as isize + off) as usize];
                    }
                }
            }
        }
        if let Some(counter) = counter {
            counter.fetch_add(macs, Ordering::Relaxed);
        }
    });
    Ok(out)
}

/// Synthesis convolution `W Δ_s z` onto a `(z.height*s) x (z.width*s)` image.
pub fn conv_synthesis<T: Real>(z: &CoeffMap<T>, bank: &FilterBank<T>) -> Result<Image<T>> {
    let s = bank.stride();
    synthesis_impl(z, bank, z.height() * s, z.width() * s, None)
}

/// Synthesis onto an explicit `height x width` image. This is the exact
/// transpose of [`conv_analysis`] on images of that size, so the grid of
/// `z` must be `ceil(height/s) x ceil(width/s)`.
pub fn conv_synthesis_into<T: Real>(
    z: &CoeffMap<T>,
    bank: &FilterBank<T>,
    height: usize,
    width: usize,
) -> Result<Image<T>> {
    synthesis_impl(z, bank, height, width, None)
}

pub fn conv_synthesis_counted<T: Real>(
    z: &CoeffMap<T>,
    bank: &FilterBank<T>,
    height: usize,
    width: usize,
) -> Result<(Image<T>, u64)> {
    let counter = AtomicU64::new(0);
    let x = synthesis_impl(z, bank, height, width, Some(&counter))?;
    Ok((x, counter.into_inner()))
}

fn synthesis_impl<T: Real>(
    z: &CoeffMap<T>,
    bank: &FilterBank<T>,
    h: usize,
    w: usize,
    counter: Option<&AtomicU64>,
) -> Result<Image<T>> {
    if z.channels() != bank.num_filters() {
        return Err(Error::contract(format!(
            "coefficient map has {} channels but filter bank has {} filters",
            z.channels(),
            bank.num_filters()
        )));
    }
    let s = bank.stride();
    let (hs, ws) = (z.height(), z.width());
    if h == 0 || w == 0 || grid_len(h, s) != hs || grid_len(w, s) != ws {
        return Err(Error::shape(format!(
            "{hs}x{ws} coefficient grid does not match a {h}x{w} image at stride {s}"
        )));
    }
    check_finite_coeffs(z)?;
    let p = bank.filter_size();
    let c = bank.center();
    let mut out = Image::zeros(h, w);

    par::for_each_chunk(out.data_mut(), w, |r, out_row| {
        let mut macs = 0u64;
        for j in 0..bank.num_filters() {
            let filt = bank.filter(j);
            let plane = z.plane(j);
            for u in 0..p {
                let t = r as isize - tap_offset(u, c);
                if t < 0 || t as usize % s != 0 {
                    continue;
                }
                let a = t as usize / s;
                if a >= hs {
                    continue;
                }
                let zrow = &plane[a * ws..(a + 1) * ws];
                for v in 0..p {
                    let wt = filt[u * p + v];
                    let off = tap_offset(v, c);
                    let (lo, hi) = valid_range(ws, w, s, off);
                    if lo >= hi {
                        continue;
                    }
                    macs += (hi - lo) as u64;
                    if s == 1 {
                        let start = (lo as isize + off) as usize;
                        axpy(wt, &zrow[lo..hi], &mut out_row[start..start + hi - lo]);
                    } else {
                        for b in lo..hi {
                            out_row[((b * s) as isize + off) as usize] += wt * zrow[b];
                        }
                    }
                }
            }
        }
        if let Some(counter) = counter {
            counter.fetch_add(macs, Ordering::Relaxed);
        }
    });
    Ok(out)
}

/// Gradient of `<g, W Δ_s z>` (equivalently of `<z, Δ_sᵀ Wᵀ g>`) with
/// respect to the filter weights:
/// `out[j, u, v] = sum_{a, b} z[j, a, b] * g[a*s + u - c, b*s + v - c]`.
pub fn filter_gradient<T: Real>(
    image: &Image<T>,
    coeffs: &CoeffMap<T>,
    filter_size: usize,
    stride: usize,
) -> Result<FilterBank<T>> {
    let (h, w) = image.dims();
    let s = stride;
    let (hs, ws) = (coeffs.height(), coeffs.width());
    if grid_len(h, s) != hs || grid_len(w, s) != ws {
        return Err(Error::shape(format!(
            "{hs}x{ws} coefficient grid does not match a {h}x{w} image at stride {s}"
        )));
    }
    let p = filter_size;
    let c = (p - 1) / 2;
    let mut grad = FilterBank::zeros(coeffs.channels(), p, s);

    par::for_each_chunk(grad.weights_mut(), p * p, |j, g| {
        let plane = coeffs.plane(j);
        for u in 0..p {
            for a in 0..hs {
                let r = (a * s) as isize + tap_offset(u, c);
                if r < 0 || r >= h as isize {
                    continue;
                }
                let xrow = image.row(r as usize);
                let zrow = &plane[a * ws..(a + 1) * ws];
                for v in 0..p {
                    let off = tap_offset(v, c);
                    let (lo, hi) = valid_range(ws, w, s, off);
                    if lo >= hi {
                        continue;
                    }
                    let acc = if s == 1 {
                        let start = (lo as isize + off) as usize;
                        dot(&zrow[lo..hi], &xrow[start..start + hi - lo])
                    } else {
                        let mut acc = T::zero();
                        for b in lo..hi {
                            acc += zrow[b] * xrow[((b * s) as isize + off) as usize];
                        }
                        acc
                    };
                    g[u * p + v] += acc;
                }
            }
        }
    });
    Ok(grad)
}

/// Multiply-accumulate count of one analysis (or, equivalently, one
/// synthesis) convolution of an `h x w` image with `m` filters.
pub fn conv_macs(h: usize, w: usize, filter_size: usize, stride: usize, m: usize) -> u64 {
    let c = (filter_size - 1) / 2;
    let axis = |n: usize| -> u64 {
        let ng = grid_len(n, stride);
        (0..filter_size)
            .map(|t| {
                let (lo, hi) = valid_range(ng, n, stride, tap_offset(t, c));
                (hi - lo) as u64
            })
            .sum()
    };
    m as u64 * axis(h) * axis(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(4, 4, 1, -1), (1, 4));
        assert_eq!(valid_range(4, 4, 1, 1), (0, 3));
        assert_eq!(valid_range(2, 4, 2, 1), (0, 2));
        assert_eq!(valid_range(2, 4, 2, -3), (2, 2));
        assert_eq!(valid_range(1, 1, 3, 2), (0, 0));
    }

    #[test]
    fn delta_filter_is_identity_at_stride_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Image::new(5, 6, rand_vec(&mut rng, 30)).unwrap();
        let delta = FilterBank::delta(1, 3, 1);
        let z = conv_analysis(&x, &delta).unwrap();
        assert_eq!(z.data(), x.data());
        let back = conv_synthesis(&z, &delta).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn delta_filter_subsamples_at_stride_two() {
        let x = Image::from_fn(6, 5, |r, c| (10 * r + c) as f64);
        let z = conv_analysis(&x, &FilterBank::delta(1, 3, 2)).unwrap();
        assert_eq!((z.height(), z.width()), (3, 3));
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(z.get(0, a, b), x.get(2 * a, 2 * b));
            }
        }
    }

    #[test]
    fn zero_coefficients_synthesize_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = FilterBank::new(3, 5, 2, rand_vec(&mut rng, 75)).unwrap();
        let img = conv_synthesis(&CoeffMap::zeros(3, 4, 4), &bank).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_a_contract_error() {
        let bank = FilterBank::<f64>::delta(2, 3, 1);
        let err = conv_synthesis(&CoeffMap::zeros(3, 2, 2), &bank).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut x = Image::<f64>::zeros(3, 3);
        x.set(1, 1, f64::INFINITY);
        let err = conv_analysis(&x, &FilterBank::delta(1, 3, 1)).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn counted_macs_match_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, p, s) in [(7, 9, 3, 1), (8, 8, 7, 2), (10, 5, 4, 3), (3, 3, 7, 4)] {
            let bank = FilterBank::new(2, p, s, rand_vec(&mut rng, 2 * p * p)).unwrap();
            let x = Image::new(h, w, rand_vec(&mut rng, h * w)).unwrap();
            let (z, a_macs) = conv_analysis_counted(&x, &bank).unwrap();
            let (_, s_macs) = conv_synthesis_counted(&z, &bank, h, w).unwrap();
            assert_eq!(a_macs, conv_macs(h, w, p, s, 2));
            assert_eq!(s_macs, a_macs);
        }
    }

    #[test]
    fn filter_gradient_matches_inner_product_derivative() {
        // <g, W z> is linear in W, so its gradient is exact under perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in 1..=3 {
            let (h, w) = (7, 8);
            let z = CoeffMap::new(2, grid_len(h, s), grid_len(w, s), rand_vec(&mut rng, 2 * grid_len(h, s) * grid_len(w, s))).unwrap();
            let g = Image::new(h, w, rand_vec(&mut rng, h * w)).unwrap();
            let grad = filter_gradient(&g, &z, 3, s).unwrap();
            for k in 0..18 {
                let mut e = FilterBank::zeros(2, 3, s);
                e.weights_mut()[k] = 1.0;
                let col = conv_synthesis_into(&z, &e, h, w).unwrap();
                let expect: f64 = col.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                assert!((grad.weights()[k] - expect).abs() < 1e-12);
            }
        }
    }
}
