//! Fully connected layers, `y = W x + b` with `W` stored `[m, n]` row-major.

use super::linalg::{gemm, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weight storage accepted by the row kernels. Values are widened to `f64`
/// before use, so `f32` storage of `f32`-exact weights gives identical results.
pub trait Weight: Copy + Into<f64> + Send + Sync + 'static {
    /// Runs the SIMD row kernel if this CPU supports it; returns whether it did.
    fn gemv_simd(n: usize, x: &[f64], weight: &[Self], bias: &[f64], y: &mut [f64]) -> bool;
}

macro_rules! weight_impl {
    ($ty:ty, $kernel:ident) => {
        impl Weight for $ty {
            #[allow(unused_variables)]
            fn gemv_simd(n: usize, x: &[f64], weight: &[Self], bias: &[f64], y: &mut [f64]) -> bool {
                #[cfg(target_arch = "x86_64")]
                if has_fma() {
                    // SAFETY: CPU features detected; `gemv` checked all lengths.
                    unsafe { $kernel(n, x, weight, bias, y) };
                    return true;
                }
                false
            }
        }
    };
}

weight_impl!(f64, gemv_fma_f64);
weight_impl!(f32, gemv_fma_f32);

/// Dot product over 16 interleaved lanes, reduced in a fixed order.
fn dot_portable<W: Weight>(a: &[f64], b: &[W]) -> f64 {
    let n = a.len();
    let body = n - n % 16;
    let mut acc = [0.0; 16];
    for (x, y) in a[..body].chunks_exact(16).zip(b[..body].chunks_exact(16)) {
        for l in 0..16 {
            acc[l] += x[l] * y[l].into();
        }
    }
    let lane: [f64; 4] = std::array::from_fn(|l| (acc[l] + acc[8 + l]) + (acc[4 + l] + acc[12 + l]));
    let mut s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    for (x, y) in a[body..].iter().zip(&b[body..]) {
        s += x * (*y).into();
    }
    s
}

/// Row kernels with the lane layout of [`dot_portable`] using AVX2 fused
/// multiply-adds; `$load` widens four stored weights to `__m256d`. Rows are
/// processed in pairs to share the loads of `x`; each row keeps its own
/// accumulators, so results do not depend on the pairing.
macro_rules! gemv_fma {
    ($name:ident, $ty:ty, $load:expr) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        unsafe fn $name(n: usize, x: &[f64], weight: &[$ty], bias: &[f64], y: &mut [f64]) {
            use std::arch::x86_64::*;
            let load = $load;
            let body = n - n % 16;
            let xp = x.as_ptr();
            let finish = |acc: [__m256d; 4], wj: &[$ty], bj: f64| -> f64 {
                let sum = _mm256_add_pd(_mm256_add_pd(acc[0], acc[2]), _mm256_add_pd(acc[1], acc[3]));
                let mut lane = [0.0; 4];
                _mm256_storeu_pd(lane.as_mut_ptr(), sum);
                let mut s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
                for k in body..n {
                    s = x[k].mul_add(wj[k] as f64, s);
                }
                bj + s
            };
            let m = y.len();
            let mut j = 0;
            while j + 2 <= m {
                let (w0, w1) = (&weight[j * n..(j + 1) * n], &weight[(j + 1) * n..(j + 2) * n]);
                let (p0, p1) = (w0.as_ptr(), w1.as_ptr());
                let mut a = [_mm256_setzero_pd(); 4];
                let mut b = [_mm256_setzero_pd(); 4];
                let mut i = 0;
                while i < body {
                    for q in 0..4 {
                        let xv = _mm256_loadu_pd(xp.add(i + 4 * q));
                        a[q] = _mm256_fmadd_pd(xv, load(p0.add(i + 4 * q)), a[q]);
                        b[q] = _mm256_fmadd_pd(xv, load(p1.add(i + 4 * q)), b[q]);
                    }
                    i += 16;
                }
                y[j] = finish(a, w0, bias[j]);
                y[j + 1] = finish(b, w1, bias[j + 1]);
                j += 2;
            }
            if j < m {
                let wj = &weight[j * n..(j + 1) * n];
                let p0 = wj.as_ptr();
                let mut a = [_mm256_setzero_pd(); 4];
                let mut i = 0;
                while i < body {
                    for q in 0..4 {
                        a[q] = _mm256_fmadd_pd(_mm256_loadu_pd(xp.add(i + 4 * q)), load(p0.add(i + 4 * q)), a[q]);
                    }
                    i += 16;
                }
                y[j] = finish(a, wj, bias[j]);
            }
        }
    };
}

gemv_fma!(gemv_fma_f64, f64, |p: *const f64| _mm256_loadu_pd(p));
gemv_fma!(gemv_fma_f32, f32, |p: *const f32| _mm256_cvtps_pd(_mm_loadu_ps(p)));

#[cfg(target_arch = "x86_64")]
fn has_fma() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

/// `y[j] = bias[j] + weight[j, :] · x` for one input row of length `n`.
pub fn gemv<W: Weight>(n: usize, x: &[f64], weight: &[W], bias: &[f64], y: &mut [f64]) {
    let m = y.len();
    assert!(
        x.len() >= n && weight.len() >= m * n && bias.len() >= m,
        "gemv operand too short"
    );
    let x = &x[..n];
    if W::gemv_simd(n, x, weight, bias, y) {
        return;
    }
    for ((yj, wj), bj) in y.iter_mut().zip(weight.chunks_exact(n)).zip(bias) {
        *yj = bj + dot_portable(x, wj);
    }
}

/// Batched forward: `x` is `[batch, n]`, `y` is `[batch, m]`. Each row is
/// computed independently, so results do not depend on the batch size.
pub fn dense_raw(batch: usize, n: usize, m: usize, x: &[f64], weight: &[f64], bias: &[f64], y: &mut [f64]) {
    for (xr, yr) in x.chunks_exact(n).zip(y.chunks_exact_mut(m)).take(batch) {
        gemv(n, xr, &weight[..m * n], &bias[..m], yr);
    }
}

/// Batched backward. Weight and bias gradients are accumulated; the input
/// gradient (if requested) is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward_raw(
    batch: usize,
    n: usize,
    m: usize,
    x: &[f64],
    weight: &[f64],
    grad_y: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    gemm(m, batch, n, 1.0, grad_y, Op::T, x, Op::N, 1.0, grad_weight);
    for row in grad_y.chunks_exact(m).take(batch) {
        for (b, g) in grad_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(gx) = grad_x {
        gemm(batch, m, n, 1.0, grad_y, Op::N, weight, Op::N, 0.0, gx);
    }
}

fn check(input: &Tensor, weight: &Tensor) -> Result<(usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 || input.shape() != [ws[1]] {
        return Err(Error::Dimension(format!(
            "dense: input {:?} incompatible with weight {ws:?} (m, n)",
            input.shape()
        )));
    }
    Ok((ws[1], ws[0]))
}

pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = check(input, weight)?;
    bias.expect_shape(&[m], "dense bias")?;
    let mut y = vec![0.0; m];
    dense_raw(1, n, m, input.data(), weight.data(), bias.data(), &mut y);
    Tensor::new(&[m], y)
}

/// `(input grad, weight grad, bias grad)`.
pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, m) = check(input, weight)?;
    grad_out.expect_shape(&[m], "dense output gradient")?;
    let mut gx = Tensor::zeros(&[n]);
    let mut gw = Tensor::zeros(&[m, n]);
    let mut gb = Tensor::zeros(&[m]);
    dense_backward_raw(
        1,
        n,
        m,
        input.data(),
        weight.data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gx.data_mut()),
    );
    Ok((gx, gw, gb))
}
