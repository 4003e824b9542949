//! Row-major dense matrices for tall-skinny factors, plus the small dense
//! decompositions (thin QR, thin SVD, symmetric eigen) the solvers need.
//!
//! Factors are `n x r` with `r` small, so every dense kernel here is either
//! linear in the tall dimension or cubic in `r` only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(alloc::format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(dim_err("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn fro_norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn fro_norm(&self) -> f64 {
        libm::sqrt(self.fro_norm_sq())
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Mat) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        dot(&self.data, &other.data)
    }

    pub fn col_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x * x;
            }
        }
        out
    }

    pub fn col_norms(&self) -> Vec<f64> {
        self.col_norms_sq().into_iter().map(libm::sqrt).collect()
    }

    /// Whether column `j` has any nonzero entry (exact comparison).
    pub fn column_is_zero(&self, j: usize) -> bool {
        (0..self.rows).all(|i| self[(i, j)] == 0.0)
    }

    /// Right-multiplication by a diagonal matrix.
    pub fn scale_columns(&self, d: &[f64]) -> Mat {
        debug_assert_eq!(d.len(), self.cols);
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, s) in row.iter_mut().zip(d) {
                *x *= s;
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Mat {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= alpha);
        out
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Mat) -> Mat {
        debug_assert_eq!(self.shape(), other.shape());
        let mut out = self.clone();
        axpy(alpha, &other.data, &mut out.data);
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.add_scaled(-1.0, other)
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Mat {
        Mat::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    /// Inverse of [`Mat::select_columns`]: places column `j` at `idx[j]` of a
    /// zero matrix with `width` columns.
    pub fn scatter_columns(&self, idx: &[usize], width: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, width);
        for i in 0..self.rows {
            for (j, &dst) in idx.iter().enumerate() {
                out[(i, dst)] = self[(i, j)];
            }
        }
        out
    }

    /// Plain product `self * rhs`.
    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(dim_err(alloc::format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, rhs.row(k), orow);
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_t(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.cols {
            return Err(dim_err("inner dimensions differ in A * B^T"));
        }
        Ok(Mat::from_fn(self.rows, rhs.rows, |i, j| {
            dot(self.row(i), rhs.row(j))
        }))
    }

    /// `self^T * rhs`, accumulated row by row.
    pub fn t_matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(dim_err("outer dimensions differ in A^T * B"));
        }
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for i in 0..self.rows {
            let b = rhs.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, b, &mut out.data[k * rhs.cols..(k + 1) * rhs.cols]);
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `self^T * self`.
    pub fn gram(&self) -> Mat {
        self.t_matmul(self).expect("shapes agree")
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `max |(A^T A - I)_{ij}|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin singular value decomposition `A = U diag(s) V^T` with
/// `k = min(rows, cols)` triplets sorted by decreasing singular value.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// `rows x k`, orthonormal columns.
    pub u: Mat,
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Mat,
}

/// Thin SVD through a Householder QR of the tall side followed by an SVD of
/// the small triangular factor. Each left singular vector is flipped so its
/// first nonzero entry is nonnegative.
pub fn thin_svd(a: &Mat) -> Result<ThinSvd> {
    let (n, r) = a.shape();
    if n < r {
        let t = thin_svd(&a.transpose())?;
        return Ok(canonical_signs(ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        }));
    }
    if r == 0 {
        return Ok(ThinSvd {
            u: Mat::zeros(n, 0),
            s: Vec::new(),
            v: Mat::zeros(0, 0),
        });
    }
    let qr = a.to_nalgebra().qr();
    let q = qr.q();
    let rfac = qr.r();
    let svd = nalgebra::linalg::SVD::try_new(rfac, true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure)?;
    let w = svd.u.ok_or(Error::SvdFailure)?;
    let zt = svd.v_t.ok_or(Error::SvdFailure)?;
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(core::cmp::Ordering::Equal));

    let qw = &q * &w;
    let u = Mat::from_fn(n, r, |i, j| qw[(i, order[j])]);
    let v = Mat::from_fn(r, r, |i, j| zt[(order[j], i)]);
    let s = order.iter().map(|&j| s[j]).collect();
    Ok(canonical_signs(ThinSvd { u, s, v }))
}

fn canonical_signs(mut svd: ThinSvd) -> ThinSvd {
    for j in 0..svd.u.cols() {
        let first = (0..svd.u.rows())
            .map(|i| svd.u[(i, j)])
            .find(|x| *x != 0.0)
            .unwrap_or(0.0);
        if first < 0.0 {
            for i in 0..svd.u.rows() {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
            for i in 0..svd.v.rows() {
                svd.v[(i, j)] = -svd.v[(i, j)];
            }
        }
    }
    svd
}

/// Orthonormal basis of the column space of a tall matrix (thin Q factor).
pub fn orthonormalize(a: &Mat) -> Mat {
    let q = a.to_nalgebra().qr().q();
    Mat::from_nalgebra(&q)
}

/// Upper-triangular factor of a thin QR, `min(rows, cols) x cols`.
pub fn qr_r(a: &Mat) -> Mat {
    Mat::from_nalgebra(&a.to_nalgebra().qr().r())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(s: &Mat) -> f64 {
    if s.rows() == 0 {
        return 0.0;
    }
    let eig = s.to_nalgebra().symmetric_eigenvalues();
    eig.iter().cloned().fold(0.0f64, f64::max)
}

/// Squared spectral norm `||A||_2^2`, via the Gram matrix of the narrow side.
pub fn spectral_norm_sq(a: &Mat) -> f64 {
    if a.cols() == 0 || a.rows() == 0 {
        return 0.0;
    }
    sym_max_eigenvalue(&a.gram())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        }
    }

    #[test]
    fn thin_svd_reconstructs_and_sorts() {
        let mut g = lcg(3);
        for &(n, r) in &[(8, 3), (3, 5), (20, 6), (5, 5)] {
            let a = Mat::from_fn(n, r, |_, _| g());
            let svd = thin_svd(&a).unwrap();
            let k = n.min(r);
            assert_eq!(svd.s.len(), k);
            for w in svd.s.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let rec = svd.u.scale_columns(&svd.s).matmul_t(&svd.v).unwrap();
            assert!(rec.sub(&a).fro_norm() < 1e-12 * (1.0 + a.fro_norm()));
            assert!(svd.u.orthonormality_defect() < 1e-12);
            assert!(svd.v.orthonormality_defect() < 1e-12);
            for j in 0..k {
                let first = svd.u.column(j).into_iter().find(|x| *x != 0.0).unwrap();
                assert!(first >= 0.0);
            }
        }
    }

    #[test]
    fn products_agree() {
        let mut g = lcg(9);
        let a = Mat::from_fn(5, 3, |_, _| g());
        let b = Mat::from_fn(4, 3, |_, _| g());
        let abt = a.matmul_t(&b).unwrap();
        let abt2 = a.matmul(&b.transpose()).unwrap();
        assert!(abt.sub(&abt2).fro_norm() < 1e-14);
        let ata = a.t_matmul(&a).unwrap();
        assert!(ata.sub(&a.gram()).fro_norm() < 1e-14);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Mat::from_rows(&[&[3.0, 0.0], &[0.0, -4.0], &[0.0, 0.0]]).unwrap();
        assert!((spectral_norm_sq(&a) - 16.0).abs() < 1e-12);
    }
}
