//! Closed-form minimizers of the per-block subproblems.
//!
//! Column ℓ2,0 hard thresholding keeps a column exactly when its norm is
//! strictly above the threshold; at equality the column is set to zero.
//! Dropped columns are bitwise zero.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{param_err, Error, Result};
use crate::factor::RegWeights;
use crate::linalg::Mat;

/// Largest column count accepted by [`brute_force_prox`].
pub const BRUTE_FORCE_MAX_COLS: usize = 12;

fn zero_columns_where(mut g: Mat, drop: &[bool]) -> Mat {
    if drop.iter().any(|&d| d) {
        let cols = g.cols();
        for row in g.as_mut_slice().chunks_exact_mut(cols.max(1)) {
            for (x, &d) in row.iter_mut().zip(drop) {
                if d {
                    *x = 0.0;
                }
            }
        }
    }
    g
}

pub(crate) fn threshold_columns(g: Mat, tau: f64) -> Mat {
    let drop: Vec<bool> = g.col_norms().iter().map(|&nrm| nrm <= tau).collect();
    zero_columns_where(g, &drop)
}

/// Keeps column `G_i` iff `‖G_i‖ > tau`, otherwise zeroes it.
pub fn hard_threshold_columns(g: &Mat, tau: f64) -> Result<Mat> {
    if !(tau > 0.0) {
        return Err(param_err(format!("threshold must be positive, got {tau}")));
    }
    Ok(threshold_columns(g.clone(), tau))
}

/// Exact minimizer of
/// `⟨grad, U⟩ + (γ/2)‖U − anchor‖² + (μ/2)‖U‖² + λ‖U‖_{2,0}`:
/// the ridge point `G = (γ·anchor − grad)/(μ + γ)` column-thresholded at
/// `√(2λ/(μ+γ))`.
pub fn prox_l20_step(grad: &Mat, anchor: &Mat, gamma: f64, w: &RegWeights) -> Result<Mat> {
    let g = ridge_step(grad, anchor, gamma, w.mu)?;
    if w.lambda == 0.0 {
        return Ok(g);
    }
    let tau = libm::sqrt(2.0 * w.lambda / (w.mu + gamma));
    Ok(threshold_columns(g, tau))
}

/// Exact minimizer of `½‖G − UΛ‖²_F + λ‖U‖_{2,0}` for a positive diagonal `Λ`:
/// `U_i = G_i/Λ_ii` if `‖G_i‖ > √(2λ)`, else `0`.
pub fn scaled_hard_threshold(g: &Mat, lam: &[f64], lambda: f64) -> Result<Mat> {
    if lam.len() != g.cols() {
        return Err(param_err("scaling diagonal length differs from column count"));
    }
    if lam.iter().any(|&l| !(l > 0.0)) {
        return Err(param_err("scaling diagonal must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(param_err("lambda must be nonnegative"));
    }
    Ok(scaled_threshold_unchecked(g, lam, lambda))
}

pub(crate) fn scaled_threshold_unchecked(g: &Mat, lam: &[f64], lambda: f64) -> Mat {
    let cut = libm::sqrt(2.0 * lambda);
    let norms = g.col_norms();
    let drop: Vec<bool> = norms.iter().map(|&nrm| nrm <= cut).collect();
    let inv: Vec<f64> = lam.iter().map(|l| 1.0 / l).collect();
    zero_columns_where(g.scale_columns(&inv), &drop)
}

/// Unique minimizer of `⟨grad, U⟩ + (γ/2)‖U − anchor‖² + (μ/2)‖U‖²`,
/// i.e. `(γ·anchor − grad)/(μ + γ)`.
pub fn ridge_step(grad: &Mat, anchor: &Mat, gamma: f64, mu: f64) -> Result<Mat> {
    if !(gamma > 0.0) {
        return Err(param_err(format!("gamma must be positive, got {gamma}")));
    }
    if !(mu > 0.0) {
        return Err(param_err(format!("mu must be positive, got {mu}")));
    }
    if grad.shape() != anchor.shape() {
        return Err(param_err("gradient and anchor shapes differ"));
    }
    let s = 1.0 / (mu + gamma);
    Ok(anchor.scaled(gamma * s).add_scaled(-s, grad))
}

/// A column-separable ℓ2,0 subproblem, in the three forms the solvers use.
#[derive(Clone, Debug)]
pub enum ProxProblem<'a> {
    /// `½‖U − G‖² + (τ²/2)‖U‖_{2,0}` (plain hard thresholding at `τ`).
    Uniform { g: &'a Mat, tau: f64 },
    /// `⟨grad,U⟩ + (γ/2)‖U − anchor‖² + (μ/2)‖U‖² + λ‖U‖_{2,0}`.
    Ridge {
        grad: &'a Mat,
        anchor: &'a Mat,
        gamma: f64,
        weights: RegWeights,
    },
    /// `½‖G − UΛ‖² + λ‖U‖_{2,0}`.
    Scaled { g: &'a Mat, lam: &'a [f64], lambda: f64 },
}

impl ProxProblem<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            ProxProblem::Uniform { g, .. } | ProxProblem::Scaled { g, .. } => g.shape(),
            ProxProblem::Ridge { grad, .. } => grad.shape(),
        }
    }

    /// Objective value at `u`, evaluated from the matrix formula.
    pub fn objective(&self, u: &Mat) -> f64 {
        let count = crate::factor::column_l20(u) as f64;
        match self {
            ProxProblem::Uniform { g, tau } => 0.5 * u.sub(g).fro_norm_sq() + 0.5 * tau * tau * count,
            ProxProblem::Ridge {
                grad,
                anchor,
                gamma,
                weights,
            } => {
                grad.inner(u)
                    + 0.5 * gamma * u.sub(anchor).fro_norm_sq()
                    + 0.5 * weights.mu * u.fro_norm_sq()
                    + weights.lambda * count
            }
            ProxProblem::Scaled { g, lam, lambda } => {
                0.5 * g.sub(&u.scale_columns(lam)).fro_norm_sq() + lambda * count
            }
        }
    }

    /// Minimizer when the support is fixed to `keep`: each kept column solves
    /// its own unconstrained quadratic.
    fn restricted_minimizer(&self, keep: &[bool]) -> Mat {
        let (n, r) = self.shape();
        Mat::from_fn(n, r, |i, j| {
            if !keep[j] {
                return 0.0;
            }
            match self {
                ProxProblem::Uniform { g, .. } => g[(i, j)],
                ProxProblem::Ridge {
                    grad,
                    anchor,
                    gamma,
                    weights,
                } => (gamma * anchor[(i, j)] - grad[(i, j)]) / (weights.mu + gamma),
                ProxProblem::Scaled { g, lam, .. } => g[(i, j)] / lam[j],
            }
        })
    }
}

/// Global minimizer by enumeration of all `2^r` zero/nonzero column
/// patterns. Test oracle for the closed forms above.
pub fn brute_force_prox(problem: &ProxProblem<'_>) -> Result<Mat> {
    let (_, r) = problem.shape();
    if r > BRUTE_FORCE_MAX_COLS {
        return Err(Error::TooManyColumns {
            max: BRUTE_FORCE_MAX_COLS,
            got: r,
        });
    }
    let mut best: Option<(f64, Mat)> = None;
    for mask in 0u32..(1u32 << r) {
        let keep: Vec<bool> = (0..r).map(|j| mask & (1 << j) != 0).collect();
        let cand = problem.restricted_minimizer(&keep);
        let val = problem.objective(&cand);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, cand));
        }
    }
    Ok(best.expect("at least one pattern").1)
}
