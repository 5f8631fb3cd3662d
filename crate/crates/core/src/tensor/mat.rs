use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type usable by the tensor kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Debug> Debug for Mat<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mat({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter().take(16)).finish()
    }
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} does not match {} elements", data.len());
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { F::one() } else { F::zero() })
    }

    pub fn row_vector(data: Vec<F>) -> Self {
        let cols = data.len();
        Self::from_vec(1, cols, data)
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: F, other: &Mat<F>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &Mat<F>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_in_place(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x = *x * s);
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Mat<F>) -> F {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copy of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self::from_vec(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn vstack(parts: &[&Mat<F>]) -> Self {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.len()).sum());
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Self::from_vec(rows, cols, data)
    }

    pub fn cast<G: Scalar>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::lit(x.to_f64_lossy())).collect(),
        }
    }

    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, F::one(), F::zero());
        out
    }
}

/// `c = alpha * op(a)·op(b) + beta * c` where `op` optionally transposes.
pub fn gemm<F: Scalar>(a: &Mat<F>, ta: bool, b: &Mat<F>, tb: bool, c: &mut Mat<F>, alpha: F, beta: F) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension mismatch: {:?} x {:?}", a.shape(), b.shape());
    assert_eq!(c.shape(), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale_in_place(beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: shapes checked above; strides describe the row-major buffers.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        let a = Mat::<f64>::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Mat::<f64>::from_vec(3, 2, vec![1., 0., 0., 1., 1., 1.]);
        assert_eq!(a.matmul(&b).data(), &[4., 5., 10., 11.]);
        let mut c = Mat::zeros(2, 2);
        gemm(&b, true, &a, true, &mut c, 1.0, 0.0);
        assert_eq!(c, a.matmul(&b).transpose());
    }

    #[test]
    fn empty_inner_dimension_scales_output() {
        let a = Mat::<f32>::zeros(2, 0);
        let b = Mat::<f32>::zeros(0, 2);
        let mut c = Mat::filled(2, 2, 3.0);
        gemm(&a, false, &b, false, &mut c, 1.0, 0.5);
        assert!(c.data().iter().all(|&x| x == 1.5));
    }
}
