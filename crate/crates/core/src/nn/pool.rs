//! Non-overlapping 3×3 max pooling; remainder rows and columns are dropped.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const POOL: usize = 3;

/// Output size of pooling an `n`-long axis.
pub const fn pooled(n: usize) -> usize {
    n / POOL
}

/// Pools one `[c, h, w]` image into `out`, recording for each output the flat
/// input index of the maximum (first in row-major order on ties).
pub fn maxpool3_raw(c: usize, h: usize, w: usize, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
    let (ph, pw) = (pooled(h), pooled(w));
    for ch in 0..c {
        let base = ch * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let mut best = base + (py * POOL) * w + px * POOL;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let idx = base + (py * POOL + dy) * w + px * POOL + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                let o = (ch * ph + py) * pw + px;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

/// Routes each output gradient to its recorded argmax position.
pub fn maxpool3_backward_raw(grad_out: &[f64], argmax: &[usize], grad_in: &mut [f64]) {
    for (g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] += g;
    }
}

/// Pooled output and the argmax routing needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

pub fn maxpool3(input: &Tensor) -> Result<Pooled> {
    let s = input.shape();
    if s.len() != 3 || s[1] < POOL || s[2] < POOL {
        return Err(Error::Dimension(format!(
            "maxpool3: input {s:?} must be (C, H, W) with H, W >= {POOL}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let shape = [c, pooled(h), pooled(w)];
    let n = shape.iter().product();
    let mut out = vec![0.0; n];
    let mut argmax = vec![0; n];
    maxpool3_raw(c, h, w, input.data(), &mut out, &mut argmax);
    Ok(Pooled {
        output: Tensor::new(&shape, out)?,
        argmax,
        input_shape: s.to_vec(),
    })
}

pub fn maxpool3_backward(pooled: &Pooled, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(pooled.output.shape(), "maxpool3 output gradient")?;
    let mut grad = Tensor::zeros(&pooled.input_shape);
    maxpool3_backward_raw(grad_out.data(), &pooled.argmax, grad.data_mut());
    Ok(grad)
}
