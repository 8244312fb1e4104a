//! Dense kernels shared by forward and adjoint passes. All reductions run in
//! a fixed order so results are bit-reproducible.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LANES: usize = 8;

/// Eight interleaved partial sums, combined in a fixed order at the end.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(a_ip, &b[p * m..(p + 1) * m], out_row);
            }
        }
    }
}

/// `out[n×m] += a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(a_ip, b_row, &mut out[p * m..(p + 1) * m]);
            }
        }
    }
}

/// Unfolds `x[c_in × len]` into columns `[(c_in·k) × l_out]` for a valid strided convolution.
pub(crate) fn im2col(x: &[f64], c_in: usize, len: usize, k: usize, stride: usize, l_out: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c_in * k * l_out];
    for i in 0..c_in {
        let x_row = &x[i * len..(i + 1) * len];
        for j in 0..k {
            let dst = &mut cols[(i * k + j) * l_out..(i * k + j + 1) * l_out];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = x_row[t * stride + j];
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im_acc(cols: &[f64], dx: &mut [f64], c_in: usize, len: usize, k: usize, stride: usize, l_out: usize) {
    for i in 0..c_in {
        let dx_row = &mut dx[i * len..(i + 1) * len];
        for j in 0..k {
            let src = &cols[(i * k + j) * l_out..(i * k + j + 1) * l_out];
            for (t, s) in src.iter().enumerate() {
                dx_row[t * stride + j] += s;
            }
        }
    }
}

/// Standard normal CDF via the exact error function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// `(gelu(x), gelu'(x))` sharing one error-function evaluation.
#[inline]
pub fn gelu_with_slope(x: f64) -> (f64, f64) {
    let cdf = normal_cdf(x);
    (x * cdf, cdf + x * normal_pdf(x))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Normalizes each length-`d` slice of `x`; returns `(xhat, inv_std)` with one
/// `inv_std` per slice. Variance uses 1/d normalization.
pub(crate) fn normalize_slices(x: &[f64], d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(n);
    for s in 0..n {
        let slice = &x[s * d..(s + 1) * d];
        let mean = slice.iter().sum::<f64>() / d as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (o, v) in xhat[s * d..(s + 1) * d].iter_mut().zip(slice) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (xhat, inv_std)
}

/// Input adjoint of slice normalization given `dxhat` (already multiplied by gain).
pub(crate) fn normalize_slices_backward(xhat: &[f64], inv_std: &[f64], dxhat: &[f64], d: usize, dx: &mut [f64]) {
    let dn = d as f64;
    for (s, &is) in inv_std.iter().enumerate() {
        let range = s * d..(s + 1) * d;
        let xh = &xhat[range.clone()];
        let dxh = &dxhat[range.clone()];
        let sum_dxh: f64 = dxh.iter().sum();
        let sum_dxh_xh = dot(dxh, xh);
        for ((o, &g), &h) in dx[range].iter_mut().zip(dxh).zip(xh) {
            *o += is / dn * (dn * g - sum_dxh - h * sum_dxh_xh);
        }
    }
}
