//! Browser bindings: train a small chain, rescale an uploaded image with a
//! chosen scheme, and view where the LR perturbation went.
//!
//! The work happens in plain functions so it can be tested natively; the
//! `#[wasm_bindgen]` layer only converts errors.

use hcd_core::diffpipe::{model_from_json, ModelChain};
use hcd_core::hcd::{hcd_rescale, HcdConfig, Scheme};
use hcd_core::imaging::{ColorSpace, Image};
use hcd_core::trainer::{default_chain, make_synthetic_corpus, train, CorpusSource, TrainConfig};
use hcd_core::Tensor;
use wasm_bindgen::prelude::*;

pub const SCALE: usize = 2;
/// Kept small so a few epochs finish in a couple of seconds in the browser.
pub const DEMO_PATCH: usize = 24;
pub const DEMO_CORPUS: usize = 60;

/// RGBA bytes (as from `getImageData`) to a `[1, 3, h, w]` tensor in `[0, 1]`.
pub fn rgba_to_tensor(rgba: &[u8], width: usize, height: usize) -> Result<Tensor, String> {
    if width == 0 || height == 0 || rgba.len() != width * height * 4 {
        return Err(format!("expected {}x{} RGBA ({} bytes), got {} bytes", width, height, width * height * 4, rgba.len()));
    }
    Tensor::from_fn([1, 3, height, width], |_, c, y, x| rgba[(y * width + x) * 4 + c] as f64 / 255.0).map_err(|e| e.to_string())
}

/// Opaque RGBA bytes; gray tensors are replicated over the three channels.
pub fn tensor_to_rgba(t: &Tensor) -> Vec<u8> {
    let (c, h, w) = (t.channels(), t.height(), t.width());
    let mut out = vec![255u8; h * w * 4];
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                let v = t.at(0, k.min(c - 1), y, x);
                out[(y * w + x) * 4 + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

fn channel_mean_abs(delta: &Tensor) -> (Vec<f64>, f64) {
    let (c, n) = (delta.channels(), delta.height() * delta.width());
    let mag: Vec<f64> = (0..n).map(|i| (0..c).map(|k| delta.data()[k * n + i].abs()).sum::<f64>() / c as f64).collect();
    let max = mag.iter().fold(0.0f64, |m, &v| m.max(v));
    (mag, max)
}

/// Channel-mean `|delta|` normalized to its maximum, as a `[1, 1, h, w]`
/// map. All zeros when `delta` is zero.
pub fn magnitude_map(delta: &Tensor) -> Tensor {
    let (mag, max) = channel_mean_abs(delta);
    let data = if max > 0.0 { mag.iter().map(|v| v / max).collect() } else { mag };
    Tensor::new([1, 1, delta.height(), delta.width()], data).expect("shape matches")
}

/// Result of one rescale, kept as RGBA for canvases.
#[wasm_bindgen]
pub struct Outcome {
    width: usize,
    height: usize,
    lr_width: usize,
    lr_height: usize,
    psnr: f64,
    ssim: f64,
    max_delta: f64,
    lr: Vec<u8>,
    recon: Vec<u8>,
    delta: Vec<u8>,
}

#[wasm_bindgen]
impl Outcome {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn lr_width(&self) -> usize {
        self.lr_width
    }
    pub fn lr_height(&self) -> usize {
        self.lr_height
    }
    pub fn psnr(&self) -> f64 {
        self.psnr
    }
    pub fn ssim(&self) -> f64 {
        self.ssim
    }
    /// Largest per-pixel `|x_out - g(y)|` before normalization.
    pub fn max_delta(&self) -> f64 {
        self.max_delta
    }
    pub fn lr_rgba(&self) -> Vec<u8> {
        self.lr.clone()
    }
    pub fn recon_rgba(&self) -> Vec<u8> {
        self.recon.clone()
    }
    pub fn delta_rgba(&self) -> Vec<u8> {
        self.delta.clone()
    }
}

pub struct Session {
    pub chain: ModelChain,
}

impl Session {
    /// Untrained default chain; its residual starts at zero, so it upscales
    /// exactly like bicubic until trained.
    pub fn new() -> Result<Session, String> {
        Ok(Session { chain: default_chain(SCALE, 0).map_err(|e| e.to_string())? })
    }

    /// Trains on a small synthetic corpus and returns the held-out gain over
    /// bicubic in dB.
    pub fn train(&mut self, epochs: usize, seed: u64) -> Result<f64, String> {
        let cfg = TrainConfig {
            epochs,
            seed,
            patch_size: DEMO_PATCH,
            corpus: CorpusSource::Synthetic { n: DEMO_CORPUS, seed },
            ..TrainConfig::default()
        };
        let corpus = make_synthetic_corpus(seed, DEMO_CORPUS, DEMO_PATCH).map_err(|e| e.to_string())?;
        let (chain, report) = train(&self.chain, &corpus, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
        self.chain = chain;
        Ok(report.gain_db())
    }

    pub fn load_model(&mut self, json: &str) -> Result<(), String> {
        let chain = model_from_json(json).map_err(|e| e.to_string())?;
        if chain.scale() != SCALE || chain.up.image_channels() != 3 {
            return Err(format!("the demo runs RGB models at {SCALE}x"));
        }
        self.chain = chain;
        Ok(())
    }

    /// Crops to a multiple of the scale, then runs `scheme` with `iters`
    /// steps per phase at the given step size and budget.
    #[allow(clippy::too_many_arguments)]
    pub fn rescale(
        &self,
        rgba: &[u8],
        width: usize,
        height: usize,
        scheme: &str,
        iters: usize,
        alpha: f64,
        epsilon: f64,
    ) -> Result<Outcome, String> {
        let scheme: Scheme = scheme.parse().map_err(|e: hcd_core::Error| e.to_string())?;
        let img = Image::from_tensor(&rgba_to_tensor(rgba, width, height)?, ColorSpace::Rgb).map_err(|e| e.to_string())?;
        let y = img.crop_to_multiple(SCALE).map_err(|e| e.to_string())?.to_tensor();
        let mut cfg = HcdConfig::default().with_scheme(scheme).with_iters(iters);
        for p in [&mut cfg.hr, &mut cfg.lr] {
            p.alpha = alpha;
            p.epsilon = epsilon;
        }
        let res = hcd_rescale(&self.chain, &y, &cfg).map_err(|e| e.to_string())?;
        let delta = res.lr_delta(&self.chain, &y).map_err(|e| e.to_string())?;
        Ok(Outcome {
            width: y.width(),
            height: y.height(),
            lr_width: res.x_out.width(),
            lr_height: res.x_out.height(),
            psnr: res.metrics.psnr_y,
            ssim: res.metrics.ssim_y,
            max_delta: channel_mean_abs(&delta).1,
            lr: tensor_to_rgba(&res.x_out),
            recon: tensor_to_rgba(&res.y_recon),
            delta: tensor_to_rgba(&magnitude_map(&delta)),
        })
    }
}

/// JavaScript handle around a [`Session`].
#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        Session::new().map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn train(&mut self, epochs: usize, seed: u64) -> Result<f64, JsError> {
        self.0.train(epochs, seed).map_err(|e| JsError::new(&e))
    }

    pub fn load_model(&mut self, json: &str) -> Result<(), JsError> {
        self.0.load_model(json).map_err(|e| JsError::new(&e))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn rescale(
        &self,
        rgba: &[u8],
        width: usize,
        height: usize,
        scheme: &str,
        iters: usize,
        alpha: f64,
        epsilon: f64,
    ) -> Result<Outcome, JsError> {
        self.0.rescale(rgba, width, height, scheme, iters, alpha, epsilon).map_err(|e| JsError::new(&e))
    }
}
