//! Top-`r` partial SVD of the sparse data matrix `M_Ω` and the starting
//! points derived from it.
//!
//! Uses randomized block subspace iteration: a Gaussian sketch of width
//! `r + oversample`, alternately multiplied by `M_Ω` and `M_Ωᵀ` with
//! re-orthonormalization, followed by an exact SVD of the projected block.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{param_err, Result};
use crate::factor::FactorPair;
use crate::linalg::{orthonormalize, thin_svd, Mat};
use crate::obs::ObservationSet;
use crate::rng::{stream_rng, Stream};

/// Tuning of the randomized partial SVD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartialSvdOptions {
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for PartialSvdOptions {
    fn default() -> Self {
        PartialSvdOptions {
            oversample: 10,
            power_iters: 6,
            seed: 0,
        }
    }
}

/// Leading singular triplets of `M_Ω`.
#[derive(Clone, Debug)]
pub struct SpectralInit {
    /// `n x r` left singular vectors (`P₁`).
    pub left: Mat,
    /// `m x r` right singular vectors (`Q₁`).
    pub right: Mat,
    pub sigma: Vec<f64>,
}

impl SpectralInit {
    /// `‖M_Ω‖`, the largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `(P₁ Σ^{1/2}, Q₁ Σ^{1/2})`, the start of the AMM solvers.
    pub fn balanced_factors(&self) -> FactorPair {
        let root: Vec<f64> = self.sigma.iter().map(|s| libm::sqrt(*s)).collect();
        FactorPair {
            u: self.left.scale_columns(&root),
            v: self.right.scale_columns(&root),
        }
    }

    /// `(P⁰, Q⁰) = (Q₁, P₁)`: orthonormal `m x r` and `n x r` starts for the
    /// refactorization-based solvers.
    pub fn orthonormal_start(&self) -> (Mat, Mat) {
        (self.right.clone(), self.left.clone())
    }
}

/// Top-`r` singular triplets of the sparse matrix held by `obs`.
pub fn partial_svd(obs: &ObservationSet, r: usize, opts: &PartialSvdOptions) -> Result<SpectralInit> {
    let (n, m) = (obs.n_rows(), obs.n_cols());
    let full = n.min(m);
    if r == 0 || r > full {
        return Err(param_err(alloc::format!(
            "requested {r} singular triplets of a {n}x{m} matrix"
        )));
    }
    let width = (r + opts.oversample).min(full);
    let vals = obs.values();

    let mut rng = stream_rng(opts.seed, Stream::Sketch);
    let sketch = Mat::from_fn(m, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(&obs.spmm(vals, &sketch)?);
    for _ in 0..opts.power_iters {
        let z = orthonormalize(&obs.spmm_t(vals, &q)?);
        q = orthonormalize(&obs.spmm(vals, &z)?);
    }
    // M_Ωᵀ Q = (Qᵀ M_Ω)ᵀ = W S Zᵀ, so M_Ω ≈ (Q Z) S Wᵀ.
    let bt = obs.spmm_t(vals, &q)?;
    let svd = thin_svd(&bt)?;
    let qz = q.matmul(&svd.v)?;
    let keep: Vec<usize> = (0..r).collect();
    let mut left = qz.select_columns(&keep);
    let mut right = svd.u.select_columns(&keep);
    // Same sign convention as the thin SVD: first nonzero of each left vector ≥ 0.
    for j in 0..r {
        let first = (0..n).map(|i| left[(i, j)]).find(|x| *x != 0.0).unwrap_or(0.0);
        if first < 0.0 {
            for i in 0..n {
                left[(i, j)] = -left[(i, j)];
            }
            for i in 0..m {
                right[(i, j)] = -right[(i, j)];
            }
        }
    }
    Ok(SpectralInit {
        left,
        right,
        sigma: svd.s[..r].to_vec(),
    })
}
