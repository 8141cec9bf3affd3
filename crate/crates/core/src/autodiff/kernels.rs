//! Dense kernels shared by forward evaluation and backward accumulation.
//!
//! All matrix kernels accumulate into `out` so backward passes can reuse
//! them for `+=` gradient flows. Inner loops run over contiguous slices.

use crate::tensor::Scalar;

/// out[m,n] += a[m,k] * b[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T
pub fn matmul_abt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]
pub fn matmul_atb<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * x * (T::one() + (x * inv_sqrt2).erf())
}

/// d gelu / dx = Phi(x) + x * phi(x), with Phi the standard normal CDF.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
    cdf + x * pdf
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable log-softmax of one row.
pub fn log_softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &x in row {
        sum += (x - max).exp();
    }
    let log_z = max + sum.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - log_z;
    }
}

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// y[co, t] = b[co] + sum_{ci, k} w[co, ci, k] * x[ci, t*stride + k - pad]
pub fn conv1d<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let out_len = conv1d_out_len(len, kernel, stride, pad);
    debug_assert_eq!(out.len(), c_out * out_len);
    for co in 0..c_out {
        let out_row = &mut out[co * out_len..(co + 1) * out_len];
        out_row.fill(b[co]);
        for ci in 0..c_in {
            let x_row = &x[ci * len..(ci + 1) * len];
            let w_row = &w[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
            for (k, &wv) in w_row.iter().enumerate() {
                // t*stride + k - pad must land inside [0, len)
                for (t, o) in out_row.iter_mut().enumerate() {
                    let src = t * stride + k;
                    if src >= pad && src - pad < len {
                        *o += wv * x_row[src - pad];
                    }
                }
            }
        }
    }
}

/// Gradients of conv1d w.r.t. input, weights and bias, accumulated in place.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad_out: &[T],
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    grad_x: &mut [T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let out_len = conv1d_out_len(len, kernel, stride, pad);
    for co in 0..c_out {
        let g_row = &grad_out[co * out_len..(co + 1) * out_len];
        let mut gb = T::zero();
        for &g in g_row {
            gb += g;
        }
        grad_b[co] += gb;
        for ci in 0..c_in {
            let x_row = &x[ci * len..(ci + 1) * len];
            let w_row = &w[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
            let gw_row = &mut grad_w[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
            let gx_row = &mut grad_x[ci * len..(ci + 1) * len];
            for k in 0..kernel {
                let wv = w_row[k];
                let mut gw = T::zero();
                for (t, &g) in g_row.iter().enumerate() {
                    let src = t * stride + k;
                    if src >= pad && src - pad < len {
                        gw += g * x_row[src - pad];
                        gx_row[src - pad] += g * wv;
                    }
                }
                gw_row[k] += gw;
            }
        }
    }
}
