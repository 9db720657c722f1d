use super::types::{CoeffMap, FilterBank};
use crate::error::{Error, Result};
use crate::real::Real;

#[inline]
pub(crate) fn shrink<T: Real>(v: T, tau: T) -> T {
    let mag = v.abs() - tau;
    if mag > T::zero() {
        mag.copysign(v)
    } else {
        T::zero()
    }
}

fn check_thresholds<T: Real>(channels: usize, tau: &[T]) -> Result<()> {
    if tau.len() != channels {
        return Err(Error::contract(format!(
            "{} thresholds for {channels} channels",
            tau.len()
        )));
    }
    if let Some(bad) = tau.iter().position(|t| !(*t >= T::zero())) {
        return Err(Error::contract(format!(
            "threshold {bad} is {} (must be non-negative)",
            tau[bad]
        )));
    }
    Ok(())
}

/// Channel-wise soft-thresholding `sign(z) * max(0, |z| - tau[j])`.
pub fn soft_threshold<T: Real>(z: &CoeffMap<T>, tau: &[T]) -> Result<CoeffMap<T>> {
    let mut out = z.clone();
    soft_threshold_in_place(&mut out, tau)?;
    Ok(out)
}

pub fn soft_threshold_in_place<T: Real>(z: &mut CoeffMap<T>, tau: &[T]) -> Result<()> {
    check_thresholds(z.channels(), tau)?;
    let n = z.plane_len();
    for (plane, &t) in z.data_mut().chunks_mut(n).zip(tau) {
        for v in plane {
            *v = shrink(*v, t);
        }
    }
    Ok(())
}

/// Euclidean projection of every filter onto the unit ball.
pub fn project_unit_ball<T: Real>(bank: &FilterBank<T>) -> FilterBank<T> {
    let mut out = bank.clone();
    project_unit_ball_in_place(&mut out);
    out
}

/// Filters whose norm exceeds one by more than a few ulps are rescaled to
/// unit norm. The slack makes the projection exactly idempotent in floating
/// point.
pub fn project_unit_ball_in_place<T: Real>(bank: &mut FilterBank<T>) {
    let slack = 1.0 + 8.0 * T::epsilon().f64();
    for j in 0..bank.num_filters() {
        let f = bank.filter_mut(j);
        let norm = f.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
        if norm > slack {
            let inv = T::of(1.0 / norm);
            f.iter_mut().for_each(|v| *v *= inv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_examples() {
        assert_eq!(shrink(1.5, 1.0), 0.5);
        assert_eq!(shrink(-0.3, 0.5), 0.0);
        assert_eq!(shrink(-2.0, 0.5), -1.5);
        assert_eq!(shrink(0.7f64, 0.0), 0.7);
    }

    #[test]
    fn negative_threshold_rejected() {
        let z = CoeffMap::<f64>::zeros(2, 2, 2);
        assert!(matches!(soft_threshold(&z, &[0.1, -0.1]), Err(Error::Contract(_))));
        assert!(matches!(soft_threshold(&z, &[0.1]), Err(Error::Contract(_))));
        assert!(soft_threshold(&z, &[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn zero_threshold_is_identity() {
        let z = CoeffMap::new(2, 1, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -0.1]).unwrap();
        assert_eq!(soft_threshold(&z, &[0.0, 0.0]).unwrap(), z);
    }

    #[test]
    fn matches_prox_by_scalar_minimisation() {
        // prox(v) = argmin_x 0.5 (x - v)^2 + tau |x|, minimised by golden section
        // search on a bracket that contains the minimiser.
        fn prox_search(v: f64, tau: f64) -> f64 {
            let f = |x: f64| 0.5 * (x - v) * (x - v) + tau * x.abs();
            let (mut lo, mut hi) = (-v.abs() - 1.0, v.abs() + 1.0);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - g * (hi - lo);
                let b = lo + g * (hi - lo);
                if f(a) < f(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            0.5 * (lo + hi)
        }
        // Function-value comparisons resolve the minimiser only to ~sqrt(eps).
        let vals: Vec<f64> = (0..24).map(|i| ((i as f64) * 1.7).sin() * 2.0).collect();
        let z = CoeffMap::new(3, 2, 4, vals.clone()).unwrap();
        let tau = [0.0, 0.4, 1.3];
        let out = soft_threshold(&z, &tau).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let expect = prox_search(*v, tau[i / 8]);
            assert!((out.data()[i] - expect).abs() < 1e-7, "{i}: {} vs {expect}", out.data()[i]);
        }
    }

    #[test]
    fn projection_examples() {
        let bank = FilterBank::new(2, 2, 1, vec![2.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]).unwrap();
        let p = project_unit_ball(&bank);
        assert_eq!(p.filter(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.filter(1), bank.filter(1));
    }

    #[test]
    fn projection_is_nearest_point() {
        // Projected gradient descent on 0.5||x - w||^2 over the unit ball as an
        // independent route to the nearest point.
        let w = vec![0.9, -1.2, 0.3, 2.0, 0.1, 0.2, -0.1, 0.05, 0.3];
        let bank = FilterBank::new(1, 3, 1, w.clone()).unwrap();
        let p = project_unit_ball(&bank);
        let mut x = vec![0.0f64; 9];
        for _ in 0..2000 {
            for (xi, wi) in x.iter_mut().zip(&w) {
                *xi -= 0.1 * (*xi - wi);
            }
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1.0 {
                x.iter_mut().for_each(|v| *v /= n);
            }
        }
        for (a, b) in p.weights().iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_is_non_expansive(
            a in proptest::collection::vec(-5.0f64..5.0, 12),
            b in proptest::collection::vec(-5.0f64..5.0, 12),
            t in proptest::collection::vec(0.0f64..2.0, 3),
        ) {
            let za = CoeffMap::new(3, 2, 2, a).unwrap();
            let zb = CoeffMap::new(3, 2, 2, b).unwrap();
            let sa = soft_threshold(&za, &t).unwrap();
            let sb = soft_threshold(&zb, &t).unwrap();
            let d_in: f64 = za.data().iter().zip(zb.data()).map(|(x, y)| (x - y).powi(2)).sum();
            let d_out: f64 = sa.data().iter().zip(sb.data()).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn projection_is_idempotent(w in proptest::collection::vec(-3.0f64..3.0, 18)) {
            let bank = FilterBank::new(2, 3, 1, w).unwrap();
            let once = project_unit_ball(&bank);
            let twice = project_unit_ball(&once);
            prop_assert_eq!(&once, &twice);
            for j in 0..2 {
                let n: f64 = once.filter(j).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn projection_is_idempotent_in_f32(w in proptest::collection::vec(-3.0f32..3.0, 18)) {
            let bank = FilterBank::new(2, 3, 1, w).unwrap();
            let once = project_unit_ball(&bank);
            prop_assert_eq!(&once, &project_unit_ball(&once));
        }
    }
}
