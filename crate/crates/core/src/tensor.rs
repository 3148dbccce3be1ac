//! Dense row-major `f64` matrices and the matrix-product kernels used by the tape.

use std::fmt;

/// Left operands whose fraction of nonzero entries is below this use the
/// zero-skipping kernel instead of blocked GEMM (bag-of-words features are
/// about 1% dense).
const SPARSE_LHS_DENSITY: f64 = 0.1;

/// A dense `rows × cols` matrix of doubles stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 64 {
            f.debug_struct("Tensor")
                .field("shape", &(self.rows, self.cols))
                .field("data", &self.data)
                .finish()
        } else {
            write!(f, "Tensor {{ shape: ({}, {}), .. }}", self.rows, self.cols)
        }
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Wraps row-major storage. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "storage length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    /// Builds a tensor from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn transpose(&self) -> Tensor {
        // blocked so large square matrices stay cache-friendly
        const B: usize = 32;
        let (r, c) = (self.rows, self.cols);
        let mut out = vec![0.0; self.data.len()];
        for i0 in (0..r).step_by(B) {
            for j0 in (0..c).step_by(B) {
                for i in i0..(i0 + B).min(r) {
                    for j in j0..(j0 + B).min(c) {
                        out[j * r + i] = self.data[i * c + j];
                    }
                }
            }
        }
        Tensor::from_vec(c, r, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    /// `self[i] = f(self[i], other[i])`.
    pub fn zip_apply(&mut self, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
        assert_eq!(self.shape(), other.shape(), "zip_apply shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = f(*a, b);
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Tensor {
        self.map(|v| v * alpha)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fraction of entries that are nonzero.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|v| **v != 0.0).count() as f64 / self.data.len() as f64
    }

    /// Copies the listed columns into a new tensor (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Tensor {
        Tensor::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    /// Copies the listed rows into a new tensor (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor::from_vec(rows.len(), self.cols, data)
    }
}

/// Computes `op(a) · op(b)` where `op` optionally transposes its argument.
///
/// Dense operands go through `matrixmultiply`'s blocked kernel (strided, so
/// transposition is free). A mostly-zero left operand that is not transposed
/// uses a zero-skipping row kernel; transposed sparse left operands use a
/// scatter kernel. Both are deterministic for fixed inputs.
pub fn matmul(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Tensor {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "matmul inner dimensions differ: {k} vs {kb}");
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if !trans_b && a.density() < SPARSE_LHS_DENSITY {
        if trans_a {
            sparse_lhs_t_kernel(a, b, &mut out);
        } else {
            sparse_lhs_kernel(a, b, &mut out);
        }
        return out;
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: the pointers come from live slices whose extents match the
    // (m, k, n) shape and strides computed above; `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

// out[i,:] = Σ_p a[i,p] · b[p,:], skipping zero a[i,p]
fn sparse_lhs_kernel(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (p, &apv) in arow.iter().enumerate() {
            if apv != 0.0 {
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += apv * bv;
                }
            }
        }
    }
}

// out = aᵀ b: out[j,:] += a[p,j] · b[p,:]
fn sparse_lhs_t_kernel(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let n = b.cols;
    for p in 0..a.rows {
        let arow = a.row(p);
        let brow = &b.data[p * n..(p + 1) * n];
        for (j, &apv) in arow.iter().enumerate() {
            if apv != 0.0 {
                let orow = &mut out.data[j * n..(j + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += apv * bv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
        let a = if ta { a.transpose() } else { a.clone() };
        let b = if tb { b.transpose() } else { b.clone() };
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum()
        })
    }

    fn close(x: &Tensor, y: &Tensor) -> bool {
        x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(a, b)| (a - b).abs() < 1e-12)
    }

    #[test]
    fn small_product() {
        let a = Tensor::from_rows(&[[1.0, 2.0]]);
        let b = Tensor::from_rows(&[[3.0], [4.0]]);
        assert_eq!(matmul(&a, false, &b, false).data(), &[11.0]);
    }

    #[test]
    fn all_transpose_and_sparsity_paths_agree_with_naive() {
        let dense_a = Tensor::from_fn(5, 7, |i, j| (i as f64 * 0.3 - j as f64 * 0.17).sin());
        let sparse_a = Tensor::from_fn(5, 7, |i, j| if (i * 7 + j) % 13 == 0 { 1.5 } else { 0.0 });
        let b = Tensor::from_fn(7, 4, |i, j| (i as f64 + 2.0 * j as f64).cos());
        let bt = b.transpose();
        for a in [&dense_a, &sparse_a] {
            let at = a.transpose();
            assert!(close(&matmul(a, false, &b, false), &naive(a, false, &b, false)));
            assert!(close(&matmul(&at, true, &b, false), &naive(&at, true, &b, false)));
            assert!(close(&matmul(a, false, &bt, true), &naive(a, false, &bt, true)));
            assert!(close(&matmul(&at, true, &bt, true), &naive(&at, true, &bt, true)));
        }
    }

    #[test]
    fn empty_inner_dimension_gives_zeros() {
        let a = Tensor::zeros(3, 0);
        let b = Tensor::zeros(0, 2);
        assert_eq!(matmul(&a, false, &b, false), Tensor::zeros(3, 2));
    }
}
