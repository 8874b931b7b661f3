//! Separable bicubic resampling as an explicit linear operator.
//!
//! Each output sample along an axis is a normalized weighted sum of input
//! samples ("weight row"). Downscaling widens the kernel by the scale factor
//! (antialiasing, as in MATLAB's `imresize`); upscaling uses the plain kernel.
//! Out-of-range taps replicate the nearest edge sample.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution parameter.
pub const BICUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Weight rows mapping `in_len` samples to `out_len` samples.
pub fn weight_rows(in_len: usize, out_len: usize) -> Vec<WeightRow> {
    let ratio = in_len as f64 / out_len as f64;
    let kscale = ratio.max(1.0);
    let support = 2.0 * kscale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let first = (center - support).floor() as i64;
            let last = (center + support).ceil() as i64;
            let mut indices = Vec::new();
            let mut weights = Vec::new();
            for j in first..=last {
                let w = cubic((center - j as f64) / kscale) / kscale;
                if w != 0.0 {
                    indices.push(j.clamp(0, in_len as i64 - 1) as usize);
                    weights.push(w);
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            WeightRow { indices, weights }
        })
        .collect()
}

/// Applies `rows` along the last axis (`horizontal`) or the height axis.
fn apply_axis(t: &Tensor, rows: &[WeightRow], horizontal: bool) -> Tensor {
    let [b, c, h, w] = t.shape();
    let (oh, ow) = if horizontal { (h, rows.len()) } else { (rows.len(), w) };
    let src = t.data();
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        if horizontal {
            for y in 0..h {
                let srow = &s[y * w..(y + 1) * w];
                for (x, row) in rows.iter().enumerate() {
                    o[y * ow + x] = row.indices.iter().zip(&row.weights).map(|(&i, &wt)| wt * srow[i]).sum();
                }
            }
        } else {
            for (y, row) in rows.iter().enumerate() {
                let orow = &mut o[y * ow..(y + 1) * ow];
                for (&i, &wt) in row.indices.iter().zip(&row.weights) {
                    let srow = &s[i * w..(i + 1) * w];
                    orow.iter_mut().zip(srow).for_each(|(ov, sv)| *ov += wt * sv);
                }
            }
        }
    }
    Tensor::from_raw([b, c, oh, ow], out)
}

/// Transpose of [`apply_axis`]: scatters each output back along its row.
fn apply_axis_transpose(t: &Tensor, rows: &[WeightRow], in_len: usize, horizontal: bool) -> Tensor {
    let [b, c, h, w] = t.shape();
    let (ih, iw) = if horizontal { (h, in_len) } else { (in_len, w) };
    let src = t.data();
    let mut out = vec![0.0; b * c * ih * iw];
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let o = &mut out[plane * ih * iw..(plane + 1) * ih * iw];
        if horizontal {
            for y in 0..h {
                let orow = &mut o[y * iw..(y + 1) * iw];
                for (x, row) in rows.iter().enumerate() {
                    let g = s[y * w + x];
                    for (&i, &wt) in row.indices.iter().zip(&row.weights) {
                        orow[i] += wt * g;
                    }
                }
            }
        } else {
            for (y, row) in rows.iter().enumerate() {
                let srow = &s[y * w..(y + 1) * w];
                for (&i, &wt) in row.indices.iter().zip(&row.weights) {
                    let orow = &mut o[i * iw..(i + 1) * iw];
                    orow.iter_mut().zip(srow).for_each(|(ov, sv)| *ov += wt * sv);
                }
            }
        }
    }
    Tensor::from_raw([b, c, ih, iw], out)
}

/// Fixed bicubic downscaler by an integer factor. Weight rows are derived
/// from the input extent on each call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BicubicOp {
    scale: usize,
}

impl BicubicOp {
    pub fn new(scale: usize) -> Result<Self> {
        if scale < 2 {
            return Err(Error::invalid(format!("bicubic scale must be >= 2, got {scale}")));
        }
        Ok(BicubicOp { scale })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    fn check_hr(&self, t: &Tensor) -> Result<()> {
        let s = self.scale;
        if t.height() % s != 0 || t.width() % s != 0 || t.height() == 0 || t.width() == 0 {
            return Err(Error::invalid(format!(
                "{}x{} is not divisible by scale {s}",
                t.height(),
                t.width()
            )));
        }
        Ok(())
    }

    /// `(rows along height, rows along width)` for an HR extent.
    pub fn rows(&self, hr_height: usize, hr_width: usize) -> (Vec<WeightRow>, Vec<WeightRow>) {
        (
            weight_rows(hr_height, hr_height / self.scale),
            weight_rows(hr_width, hr_width / self.scale),
        )
    }

    pub fn down(&self, y: &Tensor) -> Result<Tensor> {
        self.check_hr(y)?;
        let (rh, rw) = self.rows(y.height(), y.width());
        Ok(apply_axis(&apply_axis(y, &rw, true), &rh, false))
    }

    /// Exact transpose of [`BicubicOp::down`]; `grad_out` has LR extents.
    pub fn adjoint(&self, grad_out: &Tensor) -> Result<Tensor> {
        let (hh, hw) = (grad_out.height() * self.scale, grad_out.width() * self.scale);
        if grad_out.height() == 0 || grad_out.width() == 0 {
            return Err(Error::invalid("empty gradient"));
        }
        let (rh, rw) = self.rows(hh, hw);
        let t = apply_axis_transpose(grad_out, &rh, hh, false);
        Ok(apply_axis_transpose(&t, &rw, hw, true))
    }

    /// Conventional bicubic upscaling (the SR baseline: no learned model).
    pub fn up(&self, x: &Tensor) -> Result<Tensor> {
        if x.height() == 0 || x.width() == 0 {
            return Err(Error::invalid("empty input"));
        }
        let rw = weight_rows(x.width(), x.width() * self.scale);
        let rh = weight_rows(x.height(), x.height() * self.scale);
        Ok(apply_axis(&apply_axis(x, &rw, true), &rh, false))
    }

    /// Exact transpose of [`BicubicOp::up`]; `grad_out` has HR extents.
    pub fn up_adjoint(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.check_hr(grad_out)?;
        let (h, w) = (grad_out.height() / self.scale, grad_out.width() / self.scale);
        let rw = weight_rows(w, grad_out.width());
        let rh = weight_rows(h, grad_out.height());
        Ok(apply_axis_transpose(&apply_axis_transpose(grad_out, &rh, h, false), &rw, w, true))
    }
}
