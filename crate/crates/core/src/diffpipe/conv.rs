//! 2-D convolution with zero padding `kernel / 2`, lowered to GEMM through
//! an explicit im2col buffer. All routines work on a single image
//! (`[channels, height, width]` slices); batching is the caller's loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out, in, k, k]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for one [`ConvLayer`], same layout as its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &ConvLayer) -> Self {
        LayerGrad { weights: vec![0.0; layer.weights.len()], bias: vec![0.0; layer.bias.len()] }
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {kernel}")));
        }
        if stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("conv layer needs positive channels and stride"));
        }
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        })
    }

    /// He (fan-in) normal initialization, zero bias.
    pub fn he_init(&mut self, rng: &mut Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        self.weights.iter_mut().for_each(|w| *w = std * rng.normal());
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        let k = self.kernel;
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// `[in*k*k, oh*ow]` patch matrix.
    fn im2col(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride;
        let cols = oh * ow;
        let mut out = vec![0.0; self.patch_len() * cols];
        for c in 0..self.in_channels {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut out[((c * k + ky) * k + kx) * cols..][..cols];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Scatter-add of a patch matrix back onto an input-shaped buffer.
    fn col2im(&self, cols_buf: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride;
        let cols = oh * ow;
        let mut out = vec![0.0; self.in_channels * h * w];
        for c in 0..self.in_channels {
            let plane = &mut out[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols_buf[((c * k + ky) * k + kx) * cols..][..cols];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * ow..(oy + 1) * ow];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Pre-activation output `[out, oh, ow]` for one image.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_channels * h * w);
        let (oh, ow) = self.output_size(h, w);
        let n = oh * ow;
        let kdim = self.patch_len();
        let cols = self.im2col(input, h, w);
        let mut out = vec![0.0; self.out_channels * n];
        for (o, chunk) in out.chunks_exact_mut(n).enumerate() {
            chunk.fill(self.bias[o]);
        }
        // out[m, n] += W[m, k] * cols[k, n]
        unsafe {
            matrixmultiply::dgemm(
                self.out_channels,
                kdim,
                n,
                1.0,
                self.weights.as_ptr(),
                kdim as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    /// Backward pass for one image. `grad_out` is `[out, oh, ow]`.
    /// Returns the input gradient when `want_input` and accumulates parameter
    /// gradients into `param_grad` when given.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        want_input: bool,
        param_grad: Option<&mut LayerGrad>,
    ) -> Option<Vec<f64>> {
        let (oh, ow) = self.output_size(h, w);
        let n = oh * ow;
        let kdim = self.patch_len();
        if let Some(pg) = param_grad {
            let cols = self.im2col(input, h, w);
            for (o, chunk) in grad_out.chunks_exact(n).enumerate() {
                pg.bias[o] += chunk.iter().sum::<f64>();
            }
            // dW[m, k] += G[m, n] * cols[k, n]^T
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels,
                    n,
                    kdim,
                    1.0,
                    grad_out.as_ptr(),
                    n as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    n as isize,
                    1.0,
                    pg.weights.as_mut_ptr(),
                    kdim as isize,
                    1,
                );
            }
        }
        if !want_input {
            return None;
        }
        // dcols[k, n] = W[m, k]^T * G[m, n]
        let mut dcols = vec![0.0; kdim * n];
        unsafe {
            matrixmultiply::dgemm(
                kdim,
                self.out_channels,
                n,
                1.0,
                self.weights.as_ptr(),
                1,
                kdim as isize,
                grad_out.as_ptr(),
                n as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Some(self.col2im(&dcols, h, w))
    }
}
