//! Stride-1 2-D convolution over channel-major `[C, H, W]` images.
//!
//! Both passes lower to matrix products through an im2col buffer of shape
//! `[C_in·k·k, H'·W']`; kernels are stored `[C_out, C_in, k, k]`.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding: output shrinks by `k - 1`.
    Valid,
    /// Zero padding of `k / 2` on every side: output keeps the input size.
    Same,
}

/// Static shape of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, padding: Padding) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Dimension(format!("kernel size {k} must be odd")));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::Dimension("convolution needs at least one channel".into()));
        }
        if padding == Padding::Valid && (h < k || w < k) {
            return Err(Error::Dimension(format!("input {h}x{w} smaller than {k}x{k} kernel")));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            padding,
        })
    }

    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => self.k / 2,
        }
    }

    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad() + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad() + 1 - self.k
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.patch_len()
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Columns of the im2col matrix.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn cols_len(&self) -> usize {
        self.patch_len() * self.positions()
    }

    /// For kernel offset `d` along an axis of length `n`, the range of output
    /// positions whose source index `o + d - pad` lies inside the input.
    fn span(&self, d: usize, n: usize, out: usize) -> (usize, usize) {
        let pad = self.pad();
        let lo = pad.saturating_sub(d);
        let hi = (n + pad).saturating_sub(d).min(out);
        (lo, hi.max(lo))
    }

    pub fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let (oh, ow, k, pad) = (self.out_h(), self.out_w(), self.k, self.pad());
        let positions = oh * ow;
        for c in 0..self.c_in {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for dy in 0..k {
                let (y0, y1) = self.span(dy, self.h, oh);
                for dx in 0..k {
                    let (x0, x1) = self.span(dx, self.w, ow);
                    let row = &mut cols[((c * k + dy) * k + dx) * positions..][..positions];
                    if x1 <= x0 || y1 <= y0 {
                        row.fill(0.0);
                        continue;
                    }
                    row[..y0 * ow].fill(0.0);
                    row[y1 * ow..].fill(0.0);
                    for oy in y0..y1 {
                        let out = &mut row[oy * ow..(oy + 1) * ow];
                        let src = (oy + dy - pad) * self.w + x0 + dx - pad;
                        out[..x0].fill(0.0);
                        out[x0..x1].copy_from_slice(&plane[src..src + x1 - x0]);
                        out[x1..].fill(0.0);
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-and-adds `cols` into `grad`.
    pub fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        let (oh, ow, k, pad) = (self.out_h(), self.out_w(), self.k, self.pad());
        let positions = oh * ow;
        for c in 0..self.c_in {
            let plane = &mut grad[c * self.h * self.w..(c + 1) * self.h * self.w];
            for dy in 0..k {
                let (y0, y1) = self.span(dy, self.h, oh);
                for dx in 0..k {
                    let (x0, x1) = self.span(dx, self.w, ow);
                    let row = &cols[((c * k + dy) * k + dx) * positions..][..positions];
                    for oy in y0..y1 {
                        let base = (oy + dy - pad) * self.w;
                        for ox in x0..x1 {
                            plane[base + ox + dx - pad] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }

    /// `out = kernel · cols + bias`. `cols` must already hold `im2col(input)`.
    pub fn forward_cols(&self, cols: &[f64], kernel: &[f64], bias: &[f64], out: &mut [f64]) {
        let positions = self.positions();
        for (o, b) in out.chunks_exact_mut(positions).zip(bias) {
            o.fill(*b);
        }
        gemm(
            self.c_out,
            self.patch_len(),
            positions,
            1.0,
            kernel,
            Op::N,
            cols,
            Op::N,
            1.0,
            out,
        );
    }

    /// Accumulates kernel and bias gradients; when `grad_cols` is given, it
    /// receives `kernelᵀ · grad_out` (pass it to [`col2im`](Self::col2im)).
    pub fn backward_cols(
        &self,
        cols: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        grad_kernel: &mut [f64],
        grad_bias: &mut [f64],
        grad_cols: Option<&mut [f64]>,
    ) {
        let positions = self.positions();
        let patch = self.patch_len();
        gemm(
            self.c_out,
            positions,
            patch,
            1.0,
            grad_out,
            Op::N,
            cols,
            Op::T,
            1.0,
            grad_kernel,
        );
        for (g, b) in grad_out.chunks_exact(positions).zip(grad_bias.iter_mut()) {
            *b += g.iter().sum::<f64>();
        }
        if let Some(gc) = grad_cols {
            gemm(
                patch,
                self.c_out,
                positions,
                1.0,
                kernel,
                Op::T,
                grad_out,
                Op::N,
                0.0,
                gc,
            );
        }
    }
}

/// Gradients of a convolution with respect to all three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn geometry_for(input: &Tensor, kernel: &Tensor, padding: Padding) -> Result<ConvGeometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 || ks.len() != 4 || ks[2] != ks[3] || ks[1] != is[0] {
        return Err(Error::Dimension(format!(
            "conv2d: input {is:?} (C, H, W) incompatible with kernel {ks:?} (C_out, C_in, k, k)"
        )));
    }
    ConvGeometry::new(is[0], is[1], is[2], ks[0], ks[2], padding)
        .map_err(|e| Error::Dimension(format!("conv2d: input {is:?}, kernel {ks:?}: {e}")))
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = geometry_for(input, kernel, padding)?;
    bias.expect_shape(&[g.c_out], "conv2d bias")?;
    let mut cols = vec![0.0; g.cols_len()];
    g.im2col(input.data(), &mut cols);
    let mut out = vec![0.0; g.out_len()];
    g.forward_cols(&cols, kernel.data(), bias.data(), &mut out);
    Tensor::new(&[g.c_out, g.out_h(), g.out_w()], out)
}

pub fn conv2d_backward(input: &Tensor, kernel: &Tensor, grad_out: &Tensor, padding: Padding) -> Result<ConvGrads> {
    let g = geometry_for(input, kernel, padding)?;
    grad_out.expect_shape(&[g.c_out, g.out_h(), g.out_w()], "conv2d output gradient")?;
    let mut cols = vec![0.0; g.cols_len()];
    g.im2col(input.data(), &mut cols);
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[g.c_out]);
    let mut grad_cols = vec![0.0; g.cols_len()];
    g.backward_cols(
        &cols,
        kernel.data(),
        grad_out.data(),
        grad_kernel.data_mut(),
        grad_bias.data_mut(),
        Some(&mut grad_cols),
    );
    let mut grad_input = Tensor::zeros(input.shape());
    g.col2im(&grad_cols, grad_input.data_mut());
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Valid).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
        // with zero padding the corner sees only four ones
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Same).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 5, 5]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
        let small = Tensor::zeros(&[3, 2, 2]);
        assert!(matches!(
            conv2d(&small, &k, &Tensor::zeros(&[1]), Padding::Valid),
            Err(Error::Dimension(_))
        ));
        assert!(ConvGeometry::new(1, 5, 5, 1, 4, Padding::Valid).is_err());
    }
}
