//! Dense kernels shared by the forward and backward passes.
//!
//! Everything operates on flat row-major slices with loop orders chosen so
//! the inner loop walks contiguous memory and autovectorizes.

use super::NORM_EPS;

/// Register-block width for the column dimension.
const JB: usize = 16;

/// Shared kernel: one output row `out[t, :] (+)= a[t, :] · b`, with the sum
/// over the inner dimension accumulated in ascending order, blocked over
/// output columns so the accumulators stay in registers.
#[inline]
fn row_matmul<const ACC: bool>(out_row: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    let k = a_row.len();
    let mut j = 0;
    while j + JB <= n {
        let mut acc = if ACC {
            let mut acc = [0.0; JB];
            acc.copy_from_slice(&out_row[j..j + JB]);
            acc
        } else {
            [0.0; JB]
        };
        for (i, &av) in a_row.iter().enumerate() {
            let b_seg = &b[i * n + j..i * n + j + JB];
            for (q, &bv) in acc.iter_mut().zip(b_seg) {
                *q += av * bv;
            }
        }
        out_row[j..j + JB].copy_from_slice(&acc);
        j += JB;
    }
    while j < n {
        let mut acc = if ACC { out_row[j] } else { 0.0 };
        for i in 0..k {
            acc += a_row[i] * b[i * n + j];
        }
        out_row[j] = acc;
        j += 1;
    }
}

/// out[m,n] = a[m,k] · b[k,n], overwriting `out`.
pub fn matmul(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for t in 0..m {
        row_matmul::<false>(&mut out[t * n..(t + 1) * n], &a[t * k..(t + 1) * k], b, n);
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n]; gradient of weights for y = x·W.
/// Implemented by materializing aᵀ so the hot loop matches [`matmul`].
pub fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut at = alloc::vec::Vec::with_capacity(k * m);
    for i in 0..k {
        for t in 0..m {
            at.push(a[t * k + i]);
        }
    }
    for i in 0..k {
        row_matmul::<true>(&mut out[i * n..(i + 1) * n], &at[i * m..(i + 1) * m], b, n);
    }
}

/// out[m,k] = a[m,n] · b[k,n]ᵀ; gradient of inputs for y = x·W.
pub fn matmul_b_t(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    for t in 0..m {
        let a_row = &a[t * n..(t + 1) * n];
        let out_row = &mut out[t * k..(t + 1) * k];
        for (i, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
}

/// out[m,k] += a[m,n] · b[k,n]ᵀ; accumulating variant of [`matmul_b_t`].
pub fn matmul_b_t_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    for t in 0..m {
        let a_row = &a[t * n..(t + 1) * n];
        let out_row = &mut out[t * k..(t + 1) * k];
        for (i, o) in out_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[i * n..(i + 1) * n]);
        }
    }
}

/// Dot product with four independent accumulators so the FMA chains overlap.
/// The (fixed) summation order differs from a sequential fold but is
/// deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Row-wise layer norm: writes normalized rows (pre-gain) into `xhat`,
/// reciprocal standard deviations into `rstd`, and `xhat*g + b` into `out`.
pub fn layer_norm(
    out: &mut [f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    rows: usize,
    d: usize,
) {
    for t in 0..rows {
        let xr = &x[t * d..(t + 1) * d];
        let mut mean = 0.0;
        for &v in xr {
            mean += v;
        }
        mean /= d as f64;
        let mut var = 0.0;
        for &v in xr {
            let c = v - mean;
            var += c * c;
        }
        var /= d as f64;
        let rs = 1.0 / libm::sqrt(var + NORM_EPS);
        rstd[t] = rs;
        let xh = &mut xhat[t * d..(t + 1) * d];
        let o = &mut out[t * d..(t + 1) * d];
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xh[i] = h;
            o[i] = h * gain[i] + bias[i];
        }
    }
}

/// Backward of [`layer_norm`]: given dL/d(out), accumulates gain/bias grads
/// and adds dL/dx into `dx_acc`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dx_acc: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    rows: usize,
    d: usize,
) {
    for t in 0..rows {
        let dy = &dout[t * d..(t + 1) * d];
        let xh = &xhat[t * d..(t + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            let dxh = dy[i] * gain[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[i];
            dgain[i] += dy[i] * xh[i];
            dbias[i] += dy[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rs = rstd[t];
        let dx = &mut dx_acc[t * d..(t + 1) * d];
        for i in 0..d {
            let dxh = dy[i] * gain[i];
            dx[i] += rs * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::erf(u / SQRT_2))
}

#[inline]
pub fn gelu_prime(u: f64) -> f64 {
    0.5 * (1.0 + libm::erf(u / SQRT_2)) + u * INV_SQRT_2PI * libm::exp(-0.5 * u * u)
}

/// log(sum(exp(row))) with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &v in row {
        if v > mx {
            mx = v;
        }
    }
    let mut s = 0.0;
    for &v in row {
        s += libm::exp(v - mx);
    }
    mx + libm::log(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul(&mut out, &a, &b, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transposes_agree() {
        // Check Aᵀ·B and A·Bᵀ against naive triple loops.
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect(); // 2x4
        let mut got = vec![0.0; 12];
        matmul_at_b_acc(&mut got, &a, &b, 2, 3, 4);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|t| a[t * 3 + i] * b[t * 4 + j]).sum();
                assert!((got[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        let mut got2 = vec![0.0; 6]; // (2x4)·(3x4)ᵀ = 2x3
        let c: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect(); // 3x4
        matmul_b_t(&mut got2, &b, &c, 2, 4, 3);
        for t in 0..2 {
            for i in 0..3 {
                let want: f64 = (0..4).map(|j| b[t * 4 + j] * c[i * 4 + j]).sum();
                assert!((got2[t * 3 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0];
        let gain = [1.0; 4];
        let bias = [0.0; 4];
        let mut out = [0.0; 8];
        let mut xhat = [0.0; 8];
        let mut rstd = [0.0; 2];
        layer_norm(&mut out, &mut xhat, &mut rstd, &x, &gain, &bias, 2, 4);
        for t in 0..2 {
            let row = &out[t * 4..(t + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // NORM_EPS slightly shrinks it
        }
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert!((gelu(0.0)).abs() < 1e-15);
        // gelu(1) = 0.5*(1+erf(1/sqrt2)) = 0.841344746...
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.15865525393145707).abs() < 1e-12);
        // Derivative agrees with central differences.
        for &u in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_prime(u)).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let row = [1000.0, 1000.0];
        assert!((log_sum_exp(&row) - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-9);
    }
}
