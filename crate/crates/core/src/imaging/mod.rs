//! Raster images at the user boundary, Y-channel conversion and the
//! PSNR/SSIM quality metrics.

mod io;
mod metrics;

pub use io::{load_image, save_image, save_image_with_depth, BitDepth};
pub use metrics::{psnr, quality_y, ssim, Quality, PSNR_CAP_DB, SSIM_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    YCbCr,
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb | ColorSpace::YCbCr => 3,
            ColorSpace::Gray => 1,
        }
    }
}

/// Planar image with values in `[0, 1]`. Pixels are stored channel-major
/// (`c * height * width + y * width + x`), the same order as a batch-of-one
/// [`Tensor`], so conversion in either direction is a plain copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, colorspace: ColorSpace, pixels: Vec<f64>) -> Result<Self> {
        let expected = width * height * colorspace.channels();
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "{} pixel values for a {width}x{height} {colorspace:?} image (expected {expected})",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image { width, height, colorspace, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.colorspace.channels()
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw([1, self.channels(), self.height, self.width], self.pixels.clone())
    }

    /// Fails unless `t` is a single image whose values already lie in `[0, 1]`.
    pub fn from_tensor(t: &Tensor, colorspace: ColorSpace) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if b != 1 || c != colorspace.channels() {
            return Err(Error::invalid(format!("tensor {:?} is not a single {colorspace:?} image", t.shape())));
        }
        Image::new(w, h, colorspace, t.data().to_vec())
    }

    /// Like [`Image::from_tensor`] but saturates out-of-range values.
    pub fn from_tensor_clamped(t: &Tensor, colorspace: ColorSpace) -> Result<Self> {
        Image::from_tensor(&t.clamp(0.0, 1.0)?, colorspace)
    }

    /// BT.601 studio-swing luma:
    /// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`, so `Y ∈ [16/255, 235/255]`.
    pub fn rgb_to_y(&self) -> Result<Image> {
        if self.colorspace != ColorSpace::Rgb {
            return Err(Error::invalid(format!("rgb_to_y needs an RGB image, got {:?}", self.colorspace)));
        }
        let n = self.width * self.height;
        let (r, rest) = self.pixels.split_at(n);
        let (g, b) = rest.split_at(n);
        let y = (0..n)
            .map(|i| (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0)
            .collect();
        Ok(Image { width: self.width, height: self.height, colorspace: ColorSpace::Gray, pixels: y })
    }

    /// Luma plane for metric evaluation: RGB goes through [`Image::rgb_to_y`],
    /// gray images are used as-is, YCbCr contributes its first plane.
    pub fn luma(&self) -> Result<Image> {
        match self.colorspace {
            ColorSpace::Rgb => self.rgb_to_y(),
            ColorSpace::Gray => Ok(self.clone()),
            ColorSpace::YCbCr => Ok(Image {
                width: self.width,
                height: self.height,
                colorspace: ColorSpace::Gray,
                pixels: self.pixels[..self.width * self.height].to_vec(),
            }),
        }
    }

    /// Three-channel version: gray planes are replicated, RGB is returned
    /// as-is.
    pub fn to_rgb(&self) -> Result<Image> {
        match self.colorspace {
            ColorSpace::Rgb => Ok(self.clone()),
            ColorSpace::Gray => Ok(Image {
                width: self.width,
                height: self.height,
                colorspace: ColorSpace::Rgb,
                pixels: self.pixels.repeat(3),
            }),
            ColorSpace::YCbCr => Err(Error::invalid("YCbCr to RGB conversion is not supported")),
        }
    }

    /// Top-left crop of size `width x height`.
    pub fn crop(&self, width: usize, height: usize) -> Result<Image> {
        if width > self.width || height > self.height {
            return Err(Error::invalid("crop larger than image"));
        }
        let mut pixels = Vec::with_capacity(width * height * self.channels());
        for c in 0..self.channels() {
            for y in 0..height {
                let start = (c * self.height + y) * self.width;
                pixels.extend_from_slice(&self.pixels[start..start + width]);
            }
        }
        Ok(Image { width, height, colorspace: self.colorspace, pixels })
    }

    /// Largest top-left crop whose sides are multiples of `scale`.
    pub fn crop_to_multiple(&self, scale: usize) -> Result<Image> {
        if scale == 0 {
            return Err(Error::invalid("scale must be at least 1"));
        }
        let w = self.width / scale * scale;
        let h = self.height / scale * scale;
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "{}x{} image has no {scale}-multiple crop",
                self.width, self.height
            )));
        }
        self.crop(w, h)
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Image> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(Error::invalid(format!("cannot shave {border} px from {}x{}", self.width, self.height)));
        }
        let (w, h) = (self.width - 2 * border, self.height - 2 * border);
        let mut pixels = Vec::with_capacity(w * h * self.channels());
        for c in 0..self.channels() {
            for y in border..border + h {
                let start = (c * self.height + y) * self.width + border;
                pixels.extend_from_slice(&self.pixels[start..start + w]);
            }
        }
        Ok(Image { width: w, height: h, colorspace: self.colorspace, pixels })
    }
}
