//! Dense row-major kernels shared by the model: a scalar trait that
//! dispatches to the right `matrixmultiply` GEMM, plus the handful of
//! element-wise primitives (layer norm, GELU, softmax) with their adjoints.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating point type the model can run in. Training uses `f32`;
/// gradient checking uses `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` on strided views.
    ///
    /// # Safety
    /// All index ranges implied by the dimensions and strides must be in
    /// bounds for the given pointers.
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
        Self::from_f64(v).expect("representable literal")
    }
}

impl Real for f32 {
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

/// A strided read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        View { data, rows, cols, rs, cs }
    }

    pub fn t(self) -> Self {
        View { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `out = alpha * a * b + beta * out`, where `out` is `a.rows x b.cols`
/// with row stride `out_rs` and unit column stride.
pub fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, out: &mut [T], out_rs: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.extent() <= a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.extent() <= b.data.len(), "gemm: rhs view out of bounds");
    assert!((m - 1) * out_rs + n <= out.len(), "gemm: output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut out[i * out_rs..i * out_rs + n] {
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: extents checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            out_rs as isize,
            1,
        );
    }
}

/// `y = x * w + bias` for `x: rows x d_in`, `w: d_in x d_out`.
pub fn linear<T: Real>(x: &[T], rows: usize, d_in: usize, w: &[T], bias: &[T], d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * d_out);
    if bias.is_empty() {
        y.resize(rows * d_out, T::zero());
    } else {
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
    }
    gemm(T::one(), View::new(x, rows, d_in), View::new(w, d_in, d_out), T::one(), &mut y, d_out);
    y
}

/// Adjoint of [`linear`]: accumulates into `dw`/`dbias`, returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    dy: &[T],
    x: &[T],
    rows: usize,
    d_in: usize,
    w: &[T],
    d_out: usize,
    dw: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d_in];
    gemm(T::one(), View::new(dy, rows, d_out), View::new(w, d_in, d_out).t(), T::zero(), &mut dx, d_in);
    gemm(T::one(), View::new(x, rows, d_in).t(), View::new(dy, rows, d_out), T::one(), dw, d_out);
    for row in dy.chunks_exact(d_out) {
        for (g, &v) in dbias.iter_mut().zip(row) {
            *g += v;
        }
    }
    dx
}

pub const LN_EPS: f64 = 1e-5;

/// Cached statistics of a layer-norm forward pass.
#[derive(Debug, Clone, Default)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], dim: usize, gain: &[T], bias: &[T]) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / dim;
    let inv_dim = T::one() / T::from_usize(dim).unwrap();
    let eps = T::lit(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() * inv_dim;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_dim;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for i in 0..dim {
            let h = (row[i] - mean) * rs;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gain[i] + bias[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &NormCache<T>,
    dim: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / dim;
    let inv_dim = T::one() / T::from_usize(dim).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for i in 0..dim {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d = mean_d * inv_dim;
        mean_dx = mean_dx * inv_dim;
        let rs = cache.rstd[r];
        for i in 0..dim {
            dx[r * dim + i] = rs * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.044715;

fn sqrt_2_over_pi<T: Real>() -> T {
    T::lit((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = sqrt_2_over_pi::<T>() * (x + T::lit(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let k = sqrt_2_over_pi::<T>();
    let c = T::lit(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

/// In-place numerically stable softmax over one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `log(sum(exp(row)))`, stable.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::infinity() {
        return max;
    }
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn add_in_place<T: Real>(acc: &mut [T], other: &[T]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
