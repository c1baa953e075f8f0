//! Dense complex helpers: truncated SVD and accumulating matrix-vector
//! products on column-major storage.

use nalgebra::DMatrix;

use crate::error::{BemError, Result};
use crate::kernel::C64;

/// `A ~ U diag(sigma) V^H` keeping singular values `sigma_i >= eps sigma_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `m x r`
    pub u: DMatrix<C64>,
    pub sigma: Vec<f64>,
    /// `n x r`
    pub v: DMatrix<C64>,
    pub epsilon: f64,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `diag(1/sigma) U^H`, `r x m`.
    pub fn sinv_uh(&self) -> DMatrix<C64> {
        let mut m = self.u.adjoint();
        for (i, s) in self.sigma.iter().enumerate() {
            m.row_mut(i).scale_mut(1.0 / s);
        }
        m
    }

    /// `V diag(1/sigma)`, `n x r`.
    pub fn v_sinv(&self) -> DMatrix<C64> {
        let mut m = self.v.clone();
        for (i, s) in self.sigma.iter().enumerate() {
            m.column_mut(i).scale_mut(1.0 / s);
        }
        m
    }

    /// `V diag(1/sigma) U^H`.
    pub fn pinv(&self) -> DMatrix<C64> {
        self.v_sinv() * self.u.adjoint()
    }
}

/// Truncated pseudo-inverse factors of `a`. Singular values below
/// `eps * sigma_max` are dropped.
pub fn truncated_pinv(a: &DMatrix<C64>, eps: f64) -> Result<TruncatedSvd> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(BemError::ZeroMatrix);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s0 = svd.singular_values[order[0]];
    if !(s0 > 0.0) {
        return Err(BemError::ZeroMatrix);
    }
    let keep: Vec<usize> = order.into_iter().take_while(|&i| svd.singular_values[i] >= eps * s0).collect();
    let r = keep.len();
    let mut uu = DMatrix::zeros(a.nrows(), r);
    let mut vv = DMatrix::zeros(a.ncols(), r);
    for (c, &i) in keep.iter().enumerate() {
        uu.set_column(c, &u.column(i));
        vv.set_column(c, &v_t.row(i).adjoint());
    }
    Ok(TruncatedSvd {
        u: uu,
        sigma: keep.iter().map(|&i| svd.singular_values[i]).collect(),
        v: vv,
        epsilon: eps,
    })
}

/// `y += A x`.
#[inline]
pub fn gemv_acc(a: &DMatrix<C64>, x: &[C64], y: &mut [C64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    let m = a.nrows();
    let data = a.as_slice();
    for (j, xj) in x.iter().enumerate() {
        let col = &data[j * m..(j + 1) * m];
        for (yi, aij) in y.iter_mut().zip(col) {
            *yi += aij * xj;
        }
    }
}

/// `C = A B`, or `C += A B` when `accumulate`. Column-major slices:
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
pub fn gemm(m: usize, k: usize, n: usize, a: &[C64], b: &[C64], c: &mut [C64], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(C64::new(0.0, 0.0));
        }
        return;
    }
    let beta = if accumulate { [1.0, 0.0] } else { [0.0, 0.0] };
    // SAFETY: Complex64 is repr(C) with layout [re, im], the bounds were
    // checked above and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr().cast(),
            1,
            m as isize,
            b.as_ptr().cast(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr().cast(),
            1,
            m as isize,
        );
    }
}

/// Largest singular value estimate by power iteration on `A^H A`.
pub fn norm2_estimate(a: &DMatrix<C64>, iterations: usize) -> f64 {
    let mut x = nalgebra::DVector::from_fn(a.ncols(), |i, _| C64::new(1.0 + (i as f64 * 0.618).sin(), (i as f64 * 1.3).cos()));
    let mut est = 0.0;
    for _ in 0..iterations {
        let n = x.norm();
        if n == 0.0 {
            return 0.0;
        }
        x /= C64::new(n, 0.0);
        let y = a * &x;
        est = y.norm();
        x = a.adjoint() * y;
    }
    est
}
