use serde::{Deserialize, Serialize};

use super::{ColorSpace, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Side of the square Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak 1.0; identical inputs report [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(psnr_from_mse(mse))
}

pub(crate) fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" Gaussian filtering of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over the valid region: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1. Multi-channel images
/// average the per-channel means.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = w * h;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa = &a.pixels()[c * n..(c + 1) * n];
        let pb = &b.pixels()[c * n..(c + 1) * n];
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(pa, w, h, &taps);
        let mu_b = filter_valid(pb, w, h, &taps);
        let e_aa = filter_valid(&aa, w, h, &taps);
        let e_bb = filter_valid(&bb, w, h, &taps);
        let e_ab = filter_valid(&ab, w, h, &taps);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr_y: f64,
    pub ssim_y: f64,
}

/// Y-channel PSNR/SSIM between a reconstruction and its reference, both
/// batch-of-one RGB (or gray) tensors. The reconstruction is saturated to
/// `[0, 1]` first. `shave` removes that many border pixels before scoring.
/// Images smaller than the SSIM window report `ssim_y = 0`.
pub fn quality_y(recon: &Tensor, reference: &Tensor, shave: usize) -> Result<Quality> {
    let cs = match reference.channels() {
        3 => ColorSpace::Rgb,
        1 => ColorSpace::Gray,
        c => return Err(Error::invalid(format!("cannot score {c}-channel tensors"))),
    };
    let mut r = Image::from_tensor_clamped(recon, cs)?.luma()?;
    let mut t = Image::from_tensor_clamped(reference, cs)?.luma()?;
    if shave > 0 {
        r = r.shave(shave)?;
        t = t.shave(shave)?;
    }
    let psnr_y = psnr(&r, &t)?;
    let ssim_y = if r.width() >= SSIM_WINDOW && r.height() >= SSIM_WINDOW { ssim(&r, &t)? } else { 0.0 };
    Ok(Quality { psnr_y, ssim_y })
}
