//! Recovery and prediction metrics evaluated from factors.

use crate::datagen::GroundTruth;
use crate::error::{param_err, Error, Result};
use crate::factor::{product_distance_sq, FactorPair};
use crate::linalg::dot;

/// `‖X_out − M*‖_F / ‖M*‖_F` from Gram products of the factors.
pub fn relative_error(out: &FactorPair, truth: &GroundTruth) -> Result<f64> {
    relative_error_to(out, &truth.factors())
}

/// [`relative_error`] against an arbitrary factored reference.
pub fn relative_error_to(out: &FactorPair, reference: &FactorPair) -> Result<f64> {
    let denom = reference.product_norm_sq();
    if !(denom > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(libm::sqrt(product_distance_sq(out, reference)? / denom))
}

/// `Σ |X_ij − M_ij| / (|held-out| · (r_max − r_min))`.
pub fn nmae(out: &FactorPair, heldout: &[(usize, usize, f64)], r_min: f64, r_max: f64) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyHeldOut);
    }
    if !(r_max > r_min) {
        return Err(param_err("r_max must exceed r_min"));
    }
    let (n, m) = (out.u.rows(), out.v.rows());
    let mut total = 0.0;
    for &(i, j, v) in heldout {
        if i >= n || j >= m {
            return Err(Error::DimensionMismatch(alloc::format!(
                "held-out entry ({i}, {j}) outside {n}x{m}"
            )));
        }
        total += (dot(out.u.row(i), out.v.row(j)) - v).abs();
    }
    Ok(total / (heldout.len() as f64 * (r_max - r_min)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_error_cases() {
        let truth = GroundTruth::generate(30, 20, 3, 1).unwrap();
        assert!(relative_error(&truth.factors(), &truth).unwrap() < 1e-12);
        assert!((relative_error(&FactorPair::zeros(30, 20, 5), &truth).unwrap() - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = FactorPair {
            u: Mat::from_fn(30, 4, |_, _| rng.random::<f64>() - 0.5),
            v: Mat::from_fn(20, 4, |_, _| rng.random::<f64>() - 0.5),
        };
        let x = out.u.matmul_t(&out.v).unwrap();
        let ms = truth.m_l.matmul_t(&truth.m_r).unwrap();
        let dense = x.sub(&ms).fro_norm() / ms.fro_norm();
        assert!((relative_error(&out, &truth).unwrap() - dense).abs() < 1e-10);

        let zero = FactorPair::zeros(30, 20, 1);
        assert_eq!(relative_error_to(&out, &zero), Err(Error::ZeroNorm));
    }

    #[test]
    fn nmae_cases() {
        let u = Mat::from_rows(&[&[1.0], &[2.0]]).unwrap();
        let v = Mat::from_rows(&[&[1.0], &[-1.0], &[0.5]]).unwrap();
        let out = FactorPair { u, v };
        let exact: Vec<_> = vec![(0, 0, 1.0), (1, 1, -2.0), (1, 2, 1.0)];
        assert_eq!(nmae(&out, &exact, 1.0, 5.0).unwrap(), 0.0);
        let off: Vec<_> = exact.iter().map(|&(i, j, v)| (i, j, v + 4.0)).collect();
        assert!((nmae(&out, &off, 1.0, 5.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmae(&out, &[], 1.0, 5.0), Err(Error::EmptyHeldOut));
        assert!(nmae(&out, &exact, 5.0, 5.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let held: Vec<_> = (0..10)
            .map(|_| (rng.random_range(0..2), rng.random_range(0..3), rng.random::<f64>() * 4.0))
            .collect();
        let mut s = 0.0;
        for &(i, j, v) in &held {
            s += (out.u[(i, 0)] * out.v[(j, 0)] - v).abs();
        }
        assert!((nmae(&out, &held, 1.0, 5.0).unwrap() - s / 40.0).abs() < 1e-15);
    }
}
