//! Observed entries `M_Ω` and the least-squares loss `f(X) = ½‖X_Ω − M_Ω‖²_F`.
//!
//! Entries are stored sorted by `(row, col)` with row pointers (CSR), plus a
//! column-sorted permutation (CSC view) so that both `R·V` and `Rᵀ·U` stream
//! through contiguous rows of the dense factor. Indices are validated once at
//! construction and trusted afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{axpy, dot, Mat};

/// A sparse set of observed entries of an `n x m` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    csc_ptr: Vec<usize>,
    csc_row: Vec<u32>,
    csc_entry: Vec<u32>,
}

/// Residual values `(UVᵀ)_ij − M_ij`, aligned with the entries of the owning
/// [`ObservationSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct SparseResidual {
    values: Vec<f64>,
}

impl SparseResidual {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `½ Σ R_ij²`, the loss at the point the residual was taken.
    pub fn loss(&self) -> f64 {
        0.5 * dot(&self.values, &self.values)
    }
}

impl ObservationSet {
    /// Validates and sorts `(row, col, value)` triplets (0-based).
    pub fn new(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidObservations("no observed entries".into()));
        }
        if n_rows > u32::MAX as usize || n_cols > u32::MAX as usize || entries.len() > u32::MAX as usize {
            return Err(Error::InvalidObservations("dimensions exceed 32-bit indexing".into()));
        }
        for &(i, j, v) in &entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidObservations(format!(
                    "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidObservations(format!("non-finite value at ({i}, {j})")));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidObservations(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }

        let nnz = entries.len();
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for &(i, j, v) in &entries {
            row_ptr[i + 1] += 1;
            col_idx.push(j as u32);
            values.push(v);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }

        let mut csc_ptr = vec![0usize; n_cols + 1];
        for &(_, j, _) in &entries {
            csc_ptr[j + 1] += 1;
        }
        for j in 0..n_cols {
            csc_ptr[j + 1] += csc_ptr[j];
        }
        let mut fill = csc_ptr.clone();
        let mut csc_row = vec![0u32; nnz];
        let mut csc_entry = vec![0u32; nnz];
        for (e, &(i, j, _)) in entries.iter().enumerate() {
            let slot = fill[j];
            csc_row[slot] = i as u32;
            csc_entry[slot] = e as u32;
            fill[j] += 1;
        }

        Ok(ObservationSet {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
            csc_ptr,
            csc_row,
            csc_entry,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of observed entries `|Ω|`.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |e| (i, self.col_idx[e] as usize, self.values[e]))
        })
    }

    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        self.iter().collect()
    }

    /// Same index set with new values (e.g. residuals embedded as data).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(dim_err("value count differs from the index set"));
        }
        let mut out = self.clone();
        out.values = values;
        Ok(out)
    }

    /// `‖M_Ω‖_F`.
    pub fn fro_norm(&self) -> f64 {
        libm::sqrt(dot(&self.values, &self.values))
    }

    fn check_factors(&self, u: &Mat, v: &Mat) -> Result<()> {
        if u.rows() != self.n_rows || v.rows() != self.n_cols || u.cols() != v.cols() {
            return Err(dim_err(format!(
                "factors {}x{} and {}x{} do not fit observations of a {}x{} matrix",
                u.rows(),
                u.cols(),
                v.rows(),
                v.cols(),
                self.n_rows,
                self.n_cols
            )));
        }
        Ok(())
    }

    /// Residual `R_ij = Σ_k U_ik V_jk − M_ij` for `(i, j) ∈ Ω`.
    pub fn residual(&self, u: &Mat, v: &Mat) -> Result<SparseResidual> {
        self.check_factors(u, v)?;
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let urow = u.row(i);
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[e] as usize;
                values.push(dot(urow, v.row(j)) - self.values[e]);
            }
        }
        Ok(SparseResidual { values })
    }

    /// `f(UVᵀ) = ½ Σ_Ω ((UVᵀ)_ij − M_ij)²`, without forming `UVᵀ`.
    pub fn loss_value(&self, u: &Mat, v: &Mat) -> Result<f64> {
        Ok(self.residual(u, v)?.loss())
    }

    /// Predictions `(UVᵀ)_ij` on `Ω`.
    pub fn predict(&self, u: &Mat, v: &Mat) -> Result<Vec<f64>> {
        let r = self.residual(u, v)?;
        Ok(r.values.iter().zip(&self.values).map(|(r, m)| r + m).collect())
    }

    /// `S·B` where `S` is the `n x m` sparse matrix carrying `vals` on `Ω`.
    pub fn spmm(&self, vals: &[f64], b: &Mat) -> Result<Mat> {
        if vals.len() != self.nnz() || b.rows() != self.n_cols {
            return Err(dim_err("sparse product: operand shapes do not match"));
        }
        let mut out = Mat::zeros(self.n_rows, b.cols());
        for i in 0..self.n_rows {
            let orow = out.row_mut(i);
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let s = vals[e];
                if s != 0.0 {
                    axpy(s, b.row(self.col_idx[e] as usize), orow);
                }
            }
        }
        Ok(out)
    }

    /// `Sᵀ·B`, streamed through the column-sorted view.
    pub fn spmm_t(&self, vals: &[f64], b: &Mat) -> Result<Mat> {
        if vals.len() != self.nnz() || b.rows() != self.n_rows {
            return Err(dim_err("transposed sparse product: operand shapes do not match"));
        }
        let mut out = Mat::zeros(self.n_cols, b.cols());
        for j in 0..self.n_cols {
            let orow = out.row_mut(j);
            for s in self.csc_ptr[j]..self.csc_ptr[j + 1] {
                let w = vals[self.csc_entry[s] as usize];
                if w != 0.0 {
                    axpy(w, b.row(self.csc_row[s] as usize), orow);
                }
            }
        }
        Ok(out)
    }

    /// `∇_U F(U,V) = ∇f(UVᵀ)·V = R·V`.
    pub fn grad_u(&self, res: &SparseResidual, v: &Mat) -> Result<Mat> {
        self.spmm(&res.values, v)
    }

    /// `∇_V F(U,V) = ∇f(UVᵀ)ᵀ·U = Rᵀ·U`.
    pub fn grad_v(&self, res: &SparseResidual, u: &Mat) -> Result<Mat> {
        self.spmm_t(&res.values, u)
    }

    /// Spectral norm `‖M_Ω‖` by power iteration on `M_Ωᵀ M_Ω`.
    pub fn spectral_norm(&self) -> f64 {
        // Deterministic, dense start vector; the golden-ratio sequence avoids
        // accidental orthogonality to the top singular vector.
        let mut x = Mat::from_fn(self.n_cols, 1, |j, _| {
            let t = (j as f64 + 1.0) * 0.618_033_988_749_895;
            0.5 + (t - libm::floor(t))
        });
        let mut sigma = 0.0;
        for _ in 0..500 {
            let nx = x.fro_norm();
            if nx == 0.0 {
                return 0.0;
            }
            x = x.scaled(1.0 / nx);
            let y = self.spmm(&self.values, &x).expect("shapes agree");
            let next = y.fro_norm();
            x = self.spmm_t(&self.values, &y).expect("shapes agree");
            if (next - sigma).abs() <= 1e-13 * next {
                return next;
            }
            sigma = next;
        }
        sigma
    }
}

/// Lipschitz modulus of `∇f` for the matrix-completion loss:
/// `‖(X−Y)_Ω‖_F ≤ ‖X−Y‖_F`, so `L_f = 1`.
pub const fn lipschitz_f() -> f64 {
    1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_obs() -> ObservationSet {
        ObservationSet::new(3, 2, vec![(2, 1, 3.0), (0, 0, 1.0), (1, 1, -2.0), (0, 1, 0.5)]).unwrap()
    }

    fn dense_of(obs: &ObservationSet) -> Vec<Vec<Option<f64>>> {
        let mut d = vec![vec![None; obs.n_cols()]; obs.n_rows()];
        for (i, j, v) in obs.iter() {
            d[i][j] = Some(v);
        }
        d
    }

    #[test]
    fn construction_validates() {
        assert!(ObservationSet::new(2, 2, vec![]).is_err());
        assert!(ObservationSet::new(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(ObservationSet::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(ObservationSet::new(2, 2, vec![(0, 0, f64::NAN)]).is_err());
        let obs = small_obs();
        assert_eq!(obs.nnz(), 4);
        let t = obs.to_triplets();
        assert_eq!(t[0], (0, 0, 1.0));
        assert_eq!(t[3], (2, 1, 3.0));
    }

    #[test]
    fn single_entry_losses() {
        let obs = ObservationSet::new(1, 1, vec![(0, 0, 1.0)]).unwrap();
        let one = Mat::from_rows(&[&[1.0]]).unwrap();
        let zero = Mat::zeros(1, 1);
        assert_eq!(obs.loss_value(&one, &one).unwrap(), 0.0);
        assert_eq!(obs.loss_value(&zero, &zero).unwrap(), 0.5);
        assert!(obs.loss_value(&Mat::zeros(1, 2), &one).is_err());
    }

    #[test]
    fn residual_of_zero_factors_is_negated_data() {
        let obs = small_obs();
        let r = obs.residual(&Mat::zeros(3, 2), &Mat::zeros(2, 2)).unwrap();
        let neg: Vec<f64> = obs.values().iter().map(|v| -v).collect();
        assert_eq!(r.values(), neg.as_slice());
    }

    #[test]
    fn scalar_gradient() {
        let obs = ObservationSet::new(1, 1, vec![(0, 0, 1.0)]).unwrap();
        let u = Mat::from_rows(&[&[2.0]]).unwrap();
        let v = Mat::from_rows(&[&[3.0]]).unwrap();
        let res = obs.residual(&u, &v).unwrap();
        assert_eq!(res.values(), &[5.0]);
        assert_eq!(obs.grad_u(&res, &v).unwrap()[(0, 0)], 15.0);
        assert_eq!(obs.grad_v(&res, &u).unwrap()[(0, 0)], 10.0);
    }

    #[test]
    fn spectral_norm_of_diagonal_pattern() {
        let obs = ObservationSet::new(3, 3, vec![(0, 0, 2.0), (1, 1, -5.0), (2, 2, 1.0)]).unwrap();
        assert!((obs.spectral_norm() - 5.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn residual_and_products_match_dense(
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (n, m, r) = (5usize, 4usize, 2usize);
            let mut entries = Vec::new();
            for i in 0..n { for j in 0..m { if rng.random::<f64>() < 0.5 { entries.push((i, j, rng.random::<f64>() - 0.5)); } } }
            if entries.is_empty() { entries.push((0, 0, 1.0)); }
            let obs = ObservationSet::new(n, m, entries).unwrap();
            let u = Mat::from_fn(n, r, |_, _| rng.random::<f64>() - 0.5);
            let v = Mat::from_fn(m, r, |_, _| rng.random::<f64>() - 0.5);
            let dense = dense_of(&obs);
            let x = u.matmul_t(&v).unwrap();
            let mut loss = 0.0;
            let mut gu = Mat::zeros(n, r);
            let mut gv = Mat::zeros(m, r);
            for i in 0..n { for j in 0..m { if let Some(mij) = dense[i][j] {
                let rij = x[(i, j)] - mij;
                loss += 0.5 * rij * rij;
                for k in 0..r { gu[(i, k)] += rij * v[(j, k)]; gv[(j, k)] += rij * u[(i, k)]; }
            } } }
            let res = obs.residual(&u, &v).unwrap();
            prop_assert!((res.loss() - loss).abs() < 1e-12);
            prop_assert!(obs.grad_u(&res, &v).unwrap().sub(&gu).fro_norm() < 1e-12);
            prop_assert!(obs.grad_v(&res, &u).unwrap().sub(&gv).fro_norm() < 1e-12);
        }
    }
}
