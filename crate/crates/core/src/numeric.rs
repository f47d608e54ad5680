//! Dense vectors and matrices, activations, distances and the small GEMM
//! shim the recurrent layers are built on.
//!
//! Everything is generic over [`Real`] so the same code runs in single
//! precision for training and in double precision for gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, AweError, Result};
use crate::random::RandomSource;

/// Floating point width a network is stored and evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

/// Scalar type usable by every numeric routine in the crate.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const PRECISION: Precision;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value; `bytes` must hold exactly [`Precision::byte_width`] bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// # Safety
    /// Pointers and strides must describe matrices of the given shapes that
    /// lie entirely inside live allocations; `c` must not alias `a` or `b`.
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
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

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

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

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

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec1<F> {
    values: Vec<F>,
}

impl<F: Real> Vec1<F> {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(AweError::InvalidInput("vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AweError::NonFinite(format!("vector component {i}")));
        }
        Ok(Vec1 { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| F::lit(v)).collect())
    }

    pub(crate) fn from_vec_unchecked(values: Vec<F>) -> Self {
        Vec1 { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Vec1 {
            values: vec![F::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }

    pub fn norm(&self) -> F {
        dot(&self.values, &self.values).sqrt()
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat2<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
}

impl<F: Real> Mat2<F> {
    pub fn new(rows: usize, cols: usize, values: Vec<F>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AweError::InvalidInput(format!(
                "matrix shape {rows}x{cols} must be positive"
            )));
        }
        check_dim("matrix storage", rows * cols, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AweError::NonFinite(format!("matrix entry {i}")));
        }
        Ok(Mat2 { rows, cols, values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("matrix row", cols, r.len())?;
            values.extend(r.iter().map(|&v| F::lit(v)));
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat2 {
            rows,
            cols,
            values: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = F::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.values
    }

    #[cfg(test)]
    pub(crate) fn view(&self) -> View<'_, F> {
        View::new(&self.values, self.rows, self.cols, self.cols, 1)
    }

    #[cfg(test)]
    pub(crate) fn view_mut(&mut self) -> ViewMut<'_, F> {
        ViewMut::new(&mut self.values, self.rows, self.cols, self.cols, 1)
    }
}

/// Returns `W x + b`.
pub fn affine<F: Real>(w: &Mat2<F>, x: &Vec1<F>, b: &Vec1<F>) -> Result<Vec1<F>> {
    check_dim("affine input", w.cols(), x.dim())?;
    check_dim("affine bias", w.rows(), b.dim())?;
    let mut out = b.as_slice().to_vec();
    matvec_acc(w.as_slice(), w.cols(), x.as_slice(), &mut out);
    Ok(Vec1::from_vec_unchecked(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<F: Real>(self, v: F) -> F {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(F::zero()),
        }
    }
}

pub fn activation<F: Real>(kind: Activation, x: &Vec1<F>) -> Vec1<F> {
    Vec1::from_vec_unchecked(x.as_slice().iter().map(|&v| kind.apply(v)).collect())
}

#[inline]
pub fn sigmoid<F: Real>(v: F) -> F {
    // Branch keeps exp() from overflowing for large |v|.
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

pub fn log_softmax<F: Real>(x: &Vec1<F>) -> Vec1<F> {
    let mut out = x.as_slice().to_vec();
    log_softmax_in_place(&mut out);
    Vec1::from_vec_unchecked(out)
}

pub(crate) fn log_softmax_in_place<F: Real>(x: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = x.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for v in x.iter_mut() {
        *v -= lse;
    }
}

/// `1 - cos(x, y)`. Zero-norm inputs are an error.
pub fn cosine_distance<F: Real>(x: &Vec1<F>, y: &Vec1<F>) -> Result<F> {
    check_dim("cosine distance", x.dim(), y.dim())?;
    cosine_distance_slices(x.as_slice(), y.as_slice())
}

pub(crate) fn cosine_distance_slices<F: Real>(x: &[F], y: &[F]) -> Result<F> {
    Ok(F::one() - cosine_similarity_slices(x, y)?)
}

pub(crate) fn cosine_similarity_slices<F: Real>(x: &[F], y: &[F]) -> Result<F> {
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if !(nx > F::zero()) || !(ny > F::zero()) {
        return Err(AweError::DegenerateVector(
            "cosine undefined for zero-norm vector".into(),
        ));
    }
    // Clamp so round-off cannot leave the [-1, 1] range.
    let c = dot(x, y) / (nx * ny);
    Ok(c.max(-F::one()).min(F::one()))
}

/// Inverted dropout mask: each component is 0 with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask<F: Real>(rng: &mut RandomSource, dim: usize, p: f64) -> Result<Vec1<F>> {
    let mut out = vec![F::zero(); dim];
    fill_dropout_mask(rng, &mut out, p)?;
    Ok(Vec1::from_vec_unchecked(out))
}

pub(crate) fn fill_dropout_mask<F: Real>(
    rng: &mut RandomSource,
    out: &mut [F],
    p: f64,
) -> Result<()> {
    check_dropout(p)?;
    if p == 0.0 {
        out.fill(F::one());
        return Ok(());
    }
    let keep = F::lit(1.0 / (1.0 - p));
    for v in out.iter_mut() {
        *v = if rng.random::<f64>() < p { F::zero() } else { keep };
    }
    Ok(())
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(AweError::InvalidConfig(format!(
            "dropout probability {p} must lie in [0, 1)"
        )))
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out += M x` for a row-major `M` whose rows have stride `stride`; only
/// the first `x.len()` columns of each row are read.
#[inline]
pub(crate) fn matvec_acc<F: Real>(m: &[F], stride: usize, x: &[F], out: &mut [F]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&m[r * stride..r * stride + n], x);
    }
}

/// `out += M^T y` for the same layout as [`matvec_acc`].
#[inline]
pub(crate) fn matvec_t_acc<F: Real>(m: &[F], stride: usize, y: &[F], out: &mut [F]) {
    let n = out.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr != F::zero() {
            axpy(yr, &m[r * stride..r * stride + n], out);
        }
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, F> {
    data: &'a [F],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F> View<'a, F> {
    pub(crate) fn new(data: &'a [F], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(fits(data.len(), rows, cols, rs, cs), "view out of bounds");
        View {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub(crate) fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// Mutable strided matrix view.
pub(crate) struct ViewMut<'a, F> {
    data: &'a mut [F],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F> ViewMut<'a, F> {
    pub(crate) fn new(data: &'a mut [F], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(fits(data.len(), rows, cols, rs, cs), "view out of bounds");
        ViewMut {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

fn fits(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// `C = alpha * A B + beta * C`.
pub(crate) fn gemm<F: Real>(alpha: F, a: View<'_, F>, b: View<'_, F>, beta: F, c: ViewMut<'_, F>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for r in 0..c.rows {
            for col in 0..c.cols {
                c.data[r * c.rs + col * c.cs] *= beta;
            }
        }
        return;
    }
    // SAFETY: `fits` was checked for all three views at construction, and
    // `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vec1<f64> {
        Vec1::from_f64(x).unwrap()
    }

    #[test]
    fn affine_examples() {
        let id = Mat2::<f64>::identity(2);
        let out = affine(&id, &v(&[3.0, -1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[3.0, -1.0]);

        let z = Mat2::<f64>::zeros(2, 2);
        let out = affine(&z, &v(&[7.0, 9.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);

        let w = Mat2::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let out = affine(&w, &v(&[1.0, 1.0]), &v(&[0.5, -0.5])).unwrap();
        assert_eq!(out.as_slice(), &[3.5, 6.5]);
    }

    #[test]
    fn affine_rejects_mismatch() {
        let w = Mat2::<f64>::zeros(2, 3);
        assert!(matches!(
            affine(&w, &v(&[1.0, 1.0]), &v(&[0.0, 0.0])),
            Err(AweError::DimensionMismatch { .. })
        ));
        assert!(affine(&w, &v(&[1.0, 1.0, 1.0]), &v(&[0.0])).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activation(Activation::Sigmoid, &v(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        assert_eq!(activation(Activation::Tanh, &v(&[0.0])).as_slice(), &[0.0]);
        assert_eq!(activation(Activation::Relu, &v(&[-2.0, 3.0])).as_slice(), &[0.0, 3.0]);
        // Saturated sigmoid stays finite on both sides.
        let s = activation(Activation::Sigmoid, &v(&[-800.0, 800.0]));
        assert_eq!(s.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn log_softmax_examples() {
        let out = log_softmax(&v(&[0.0; 4]));
        for &o in out.as_slice() {
            assert!((o + 4f64.ln()).abs() < 1e-12);
        }
        let out = log_softmax(&v(&[1000.0, 1000.0]));
        for &o in out.as_slice() {
            assert!((o + 2f64.ln()).abs() < 1e-12);
        }
        // ln(1 + e^-1) = 0.31326...
        let out = log_softmax(&v(&[1.0, 0.0]));
        assert!((out.as_slice()[0] + 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!((out.as_slice()[1] + 1.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.2, -0.7]);
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_distance(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let z = Vec1::<f64>::zeros(3);
        let x = v(&[1.0, 2.0, 3.0]);
        assert!(matches!(cosine_distance(&z, &x), Err(AweError::DegenerateVector(_))));
        assert!(matches!(cosine_distance(&x, &z), Err(AweError::DegenerateVector(_))));
    }

    #[test]
    fn dropout_examples() {
        let mut rng = RandomSource::new(3);
        let m: Vec1<f32> = dropout_mask(&mut rng, 16, 0.0).unwrap();
        assert!(m.as_slice().iter().all(|&x| x == 1.0));

        let a: Vec1<f32> = dropout_mask(&mut RandomSource::new(11), 64, 0.3).unwrap();
        let b: Vec1<f32> = dropout_mask(&mut RandomSource::new(11), 64, 0.3).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            dropout_mask::<f32>(&mut rng, 4, 1.0),
            Err(AweError::InvalidConfig(_))
        ));
        assert!(dropout_mask::<f32>(&mut rng, 4, -0.1).is_err());
    }

    #[test]
    fn dropout_mean_is_one() {
        // Each component is Bernoulli(1-p) scaled by 1/(1-p): mean 1,
        // variance p/(1-p).
        let n = 100_000;
        let p = 0.5;
        let m: Vec1<f64> = dropout_mask(&mut RandomSource::new(5), n, p).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / n as f64;
        let sigma = (p / (1.0 - p) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn gemm_matches_naive() {
        let a = Mat2::<f64>::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let b = Mat2::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, -1.0]]).unwrap();
        let mut c = Mat2::<f64>::zeros(2, 2);
        gemm(1.0, a.view(), b.view(), 0.0, c.view_mut());
        assert_eq!(c.as_slice(), &[7.0, -1.0, 16.0, -1.0]);
        // transposed operand: A^T A
        let mut g = Mat2::<f64>::zeros(3, 3);
        gemm(1.0, a.view().t(), a.view(), 0.0, g.view_mut());
        assert_eq!(g.get(0, 0), 17.0);
        assert_eq!(g.get(1, 2), 2.0 * 3.0 + 5.0 * 6.0);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            w in vec_strategy(12), x in vec_strategy(4), y in vec_strategy(4),
            alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        ) {
            let w = Mat2::<f32>::new(3, 4, w.iter().map(|&v| v as f32).collect()).unwrap();
            let f = |v: &[f64]| Vec1::<f32>::from_f64(v).unwrap();
            let zero = Vec1::<f32>::zeros(3);
            let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = affine(&w, &f(&comb), &zero).unwrap();
            let ax = affine(&w, &f(&x), &zero).unwrap();
            let ay = affine(&w, &f(&y), &zero).unwrap();
            let scale = w.as_slice().iter().map(|v| v.abs() as f64).sum::<f64>()
                * (x.iter().chain(&y).map(|v| v.abs()).fold(0.0, f64::max) + 1.0)
                * (alpha.abs() + beta.abs() + 1.0);
            for i in 0..3 {
                let rhs = alpha * ax.as_slice()[i] as f64 + beta * ay.as_slice()[i] as f64;
                let diff = (lhs.as_slice()[i] as f64 - rhs).abs();
                prop_assert!(diff <= 1e-5 * scale, "diff {diff} scale {scale}");
            }
        }

        #[test]
        fn log_softmax_normalized_and_shift_invariant(x in vec_strategy(6), c in -50.0f64..50.0) {
            let lx = log_softmax(&Vec1::<f64>::from_f64(&x).unwrap());
            let total: f64 = lx.as_slice().iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let ls = log_softmax(&Vec1::<f64>::from_f64(&shifted).unwrap());
            for (a, b) in lx.as_slice().iter().zip(ls.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn cosine_scale_invariant_symmetric_bounded(
            x in vec_strategy(5), y in vec_strategy(5), alpha in 0.01f64..100.0,
        ) {
            let xv = Vec1::<f64>::from_f64(&x).unwrap();
            let yv = Vec1::<f64>::from_f64(&y).unwrap();
            prop_assume!(xv.norm() > 1e-6 && yv.norm() > 1e-6);
            let d = cosine_distance(&xv, &yv).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let ds = cosine_distance(&Vec1::from_f64(&scaled).unwrap(), &yv).unwrap();
            prop_assert!((d - ds).abs() < 1e-6);
            prop_assert!((d - cosine_distance(&yv, &xv).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
