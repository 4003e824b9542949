//! Factor pairs `(U, V)`, the objectives `Φ_{λ,μ}` and `F_μ`, nonzero-column
//! bookkeeping, numerical rank and the SVD refactorization that rebalances a
//! product `A (P D)ᵀ` into `Û V̂ᵀ` with `ÛᵀÛ = V̂ᵀV̂`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::linalg::{qr_r, thin_svd, Mat};
use crate::obs::ObservationSet;

/// Singular values below this fraction of the largest are flushed to zero by
/// [`svd_refactor`], so the nonzero-column sets stay exact.
pub const REFACTOR_FLUSH: f64 = 1e-12;

/// Default relative threshold of [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-6;

/// Tall-skinny factors of `X = U Vᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    pub u: Mat,
    pub v: Mat,
}

impl FactorPair {
    pub fn new(u: Mat, v: Mat) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(dim_err(format!(
                "factor column counts differ ({} vs {})",
                u.cols(),
                v.cols()
            )));
        }
        Ok(FactorPair { u, v })
    }

    pub fn zeros(n: usize, m: usize, r: usize) -> Self {
        FactorPair {
            u: Mat::zeros(n, r),
            v: Mat::zeros(m, r),
        }
    }

    /// Column budget `r`.
    pub fn width(&self) -> usize {
        self.u.cols()
    }

    pub fn j_u(&self) -> Vec<usize> {
        nonzero_columns(&self.u)
    }

    pub fn j_v(&self) -> Vec<usize> {
        nonzero_columns(&self.v)
    }

    /// `‖UVᵀ‖²_F = tr((UᵀU)(VᵀV))`.
    pub fn product_norm_sq(&self) -> f64 {
        let gu = self.u.gram();
        let gv = self.v.gram();
        gu.inner(&gv).max(0.0)
    }

    /// Restricts both factors to the listed columns.
    pub fn select_columns(&self, idx: &[usize]) -> FactorPair {
        FactorPair {
            u: self.u.select_columns(idx),
            v: self.v.select_columns(idx),
        }
    }
}

/// `‖ABᵀ − CDᵀ‖²_F` from `r x r` Gram products only.
pub fn product_distance_sq(x: &FactorPair, y: &FactorPair) -> Result<f64> {
    if x.u.rows() != y.u.rows() || x.v.rows() != y.v.rows() {
        return Err(dim_err("factor pairs describe matrices of different shapes"));
    }
    let xx = x.product_norm_sq();
    let yy = y.product_norm_sq();
    let cross = x.u.t_matmul(&y.u)?.inner(&x.v.t_matmul(&y.v)?);
    Ok((xx + yy - 2.0 * cross).max(0.0))
}

/// Regularization weights of the model: `λ` on the column ℓ2,0 counts and
/// `μ` on the squared Frobenius norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub lambda: f64,
    pub mu: f64,
}

impl RegWeights {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(param_err(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(param_err(format!("mu must be finite and > 0, got {mu}")));
        }
        Ok(RegWeights { lambda, mu })
    }
}

/// Number of nonzero columns, `‖M‖_{2,0}`.
pub fn column_l20(m: &Mat) -> usize {
    nonzero_columns(m).len()
}

/// `J_M`: indices of columns with at least one nonzero entry (exact test).
pub fn nonzero_columns(m: &Mat) -> Vec<usize> {
    let mut nz = alloc::vec![false; m.cols()];
    for i in 0..m.rows() {
        for (flag, x) in nz.iter_mut().zip(m.row(i)) {
            if *x != 0.0 {
                *flag = true;
            }
        }
    }
    nz.iter()
        .enumerate()
        .filter_map(|(j, &f)| f.then_some(j))
        .collect()
}

/// `Φ_{λ,μ}(U,V) = f(UVᵀ) + (μ/2)(‖U‖² + ‖V‖²) + λ(‖U‖_{2,0} + ‖V‖_{2,0})`.
pub fn eval_phi(obs: &ObservationSet, fp: &FactorPair, w: &RegWeights) -> Result<f64> {
    let smooth = eval_f_mu(obs, fp, w.mu)?;
    Ok(smooth + w.lambda * (column_l20(&fp.u) + column_l20(&fp.v)) as f64)
}

/// `F_μ(U,V) = f(UVᵀ) + (μ/2)(‖U‖² + ‖V‖²)`.
pub fn eval_f_mu(obs: &ObservationSet, fp: &FactorPair, mu: f64) -> Result<f64> {
    let loss = obs.loss_value(&fp.u, &fp.v)?;
    Ok(loss + 0.5 * mu * (fp.u.fro_norm_sq() + fp.v.fro_norm_sq()))
}

/// Rank of `UVᵀ` counted as `#{σ_i > rel_tol·σ_1}`, computed from the thin QR
/// factors of `U` and `V` and an SVD of `R_U R_Vᵀ`.
pub fn numerical_rank(fp: &FactorPair, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(param_err("rank tolerance must lie in (0, 1)"));
    }
    if fp.width() == 0 {
        return Ok(0);
    }
    let ru = qr_r(&fp.u);
    let rv = qr_r(&fp.v);
    let core = ru.matmul_t(&rv)?;
    let s = thin_svd(&core)?.s;
    Ok(count_above(&s, rel_tol))
}

pub(crate) fn count_above(sorted_desc: &[f64], rel_tol: f64) -> usize {
    match sorted_desc.first() {
        Some(&s1) if s1 > 0.0 => sorted_desc.iter().filter(|&&s| s > rel_tol * s1).count(),
        _ => 0,
    }
}

/// Output of [`svd_refactor`].
#[derive(Clone, Debug)]
pub struct Refactor {
    /// `Û = P̂ D̂`.
    pub u_hat: Mat,
    /// `V̂ = P Q̂ D̂`.
    pub v_hat: Mat,
    pub p_hat: Mat,
    pub q_hat: Mat,
    /// Diagonal of `D̂`; `D̂²` holds the singular values of `A D`.
    pub d_hat: Vec<f64>,
}

impl Refactor {
    /// Number of nonzero entries of `D̂`.
    pub fn rank(&self) -> usize {
        self.d_hat.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Rewrites `A (P D)ᵀ` as `Û V̂ᵀ` through a thin SVD `A D = P̂ D̂² Q̂ᵀ`.
///
/// `P` must have orthonormal columns and `D` a nonnegative diagonal. Singular
/// values below `1e-12·σ₁` are set to zero along with the matching columns of
/// `Û` and `V̂`.
pub fn svd_refactor(a: &Mat, p: &Mat, d: &[f64]) -> Result<Refactor> {
    if a.cols() != p.cols() || d.len() != a.cols() {
        return Err(dim_err("A, P and D must share the column budget"));
    }
    if d.iter().any(|&x| x < 0.0 || x.is_nan()) {
        return Err(Error::NegativeDiagonal);
    }
    let defect = p.orthonormality_defect();
    if defect > 1e-8 {
        return Err(Error::NotOrthonormal(defect));
    }
    refactor_unchecked(a, p, d)
}

pub(crate) fn refactor_unchecked(a: &Mat, p: &Mat, d: &[f64]) -> Result<Refactor> {
    let r = a.cols();
    let ad = a.scale_columns(d);
    let svd = thin_svd(&ad)?;
    let k = svd.s.len();
    let s1 = svd.s.first().copied().unwrap_or(0.0);

    let mut d_hat = alloc::vec![0.0; r];
    for i in 0..k {
        let s = svd.s[i];
        if s1 > 0.0 && s >= REFACTOR_FLUSH * s1 {
            d_hat[i] = libm::sqrt(s);
        }
    }
    // Pad to the full budget when A has fewer rows than columns.
    let p_hat = if k == r { svd.u } else { svd.u.scatter_columns(&(0..k).collect::<Vec<_>>(), r) };
    let q_hat = if k == r {
        svd.v
    } else {
        svd.v.scatter_columns(&(0..k).collect::<Vec<_>>(), r)
    };
    let u_hat = p_hat.scale_columns(&d_hat);
    let v_hat = p.matmul(&q_hat)?.scale_columns(&d_hat);
    Ok(Refactor {
        u_hat,
        v_hat,
        p_hat,
        q_hat,
        d_hat,
    })
}

/// `‖UᵀU − VᵀV‖_F`, which vanishes at critical points of `Φ_{λ,μ}`.
pub fn balance_residual(fp: &FactorPair) -> f64 {
    fp.u.gram().sub(&fp.v.gram()).fro_norm()
}
