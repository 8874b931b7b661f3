//! Self-contained training of the upscaler (and optionally a learned
//! downscaler) on small HR patches, so every downstream experiment starts
//! from weights produced locally.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffpipe::{grads_flat, BicubicOp, ConvStack, Downscaler, LayerGrad, LossKind, ModelChain, Upscaler};
use crate::error::{Error, Result};
use crate::imaging::{load_image, quality_y};
use crate::tensor::{Rng, Tensor};

/// Fraction of the corpus (taken from the end) held out for the quality gate.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Minimum held-out gain over bicubic upscaling for a model to count as usable.
pub const GATE_DB: f64 = 0.5;

/// An epoch whose mean loss exceeds the first epoch's by this factor counts
/// as diverged even while still finite.
pub const DIVERGENCE_RATIO: f64 = 1e6;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// RNG stream for parameter initialization.
const INIT_STREAM: u64 = 0x1D17;
/// RNG stream for per-epoch batch order.
const SHUFFLE_STREAM: u64 = 0x5B0F;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Noise,
    Gradient,
    Edges,
    Checker,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Generator::Noise, Generator::Gradient, Generator::Edges, Generator::Checker];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic { generator: Generator, index: usize },
    File { path: PathBuf, x: usize, y: usize },
}

/// HR training patches, all the same size, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub patches: Vec<Tensor>,
    pub provenance: Vec<Provenance>,
}

impl Corpus {
    pub fn new(patches: Vec<Tensor>, provenance: Vec<Provenance>) -> Result<Self> {
        if patches.len() != provenance.len() {
            return Err(Error::invalid("one provenance entry per patch is required"));
        }
        if let Some(first) = patches.first() {
            for p in &patches {
                if p.shape() != first.shape() || p.batch() != 1 {
                    return Err(Error::ShapeMismatch { left: first.shape(), right: p.shape() });
                }
                if p.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::invalid("corpus patches must lie in [0, 1]"));
                }
            }
        }
        Ok(Corpus { patches, provenance })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Index where the held-out tail starts. At least one patch is held out
    /// and at least one is kept for training whenever the corpus has two.
    pub fn split_index(&self) -> usize {
        let n = self.len();
        let mut held = ((n as f64 * HOLDOUT_FRACTION).round() as usize).max(1);
        if n >= 2 {
            held = held.min(n - 1);
        }
        n.saturating_sub(held)
    }

    pub fn train_split(&self) -> &[Tensor] {
        &self.patches[..self.split_index()]
    }

    pub fn heldout(&self) -> &[Tensor] {
        &self.patches[self.split_index()..]
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

fn paint(size: usize, mut f: impl FnMut(f64, f64) -> [f64; 3]) -> Tensor {
    let mut data = vec![0.0; 3 * size * size];
    for yy in 0..size {
        for xx in 0..size {
            let v = f(xx as f64 + 0.5, yy as f64 + 0.5);
            for c in 0..3 {
                data[(c * size + yy) * size + xx] = v[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new([1, 3, size, size], data).expect("generator output is finite")
}

/// Sum of six random plane waves with `lo..hi` cycles per patch, normalized
/// to `[0, 1]`.
fn wave_field(rng: &mut Rng, size: usize, lo: f64, hi: f64) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            let theta = rng.uniform() * tau;
            let freq = (lo + (hi - lo) * rng.uniform()) / size as f64;
            [theta.cos() * freq, theta.sin() * freq, rng.uniform() * tau, 0.5 + rng.uniform()]
        })
        .collect();
    let mut plane: Vec<f64> = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            waves.iter().map(|w| w[3] * (tau * (w[0] * x + w[1] * y) + w[2]).sin()).sum()
        })
        .collect();
    let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
    plane
}

/// Band-limited color noise, 1 to 10 cycles per patch.
fn gen_noise(rng: &mut Rng, size: usize) -> Tensor {
    let data = (0..3).flat_map(|_| wave_field(rng, size, 1.0, 10.0)).collect();
    Tensor::new([1, 3, size, size], data).expect("finite")
}

/// Linear ramp between two colors along a random direction, with a faint
/// fine grain (6 to 12 cycles per patch) so it is not trivially
/// reproduced by cubic interpolation.
fn gen_gradient(rng: &mut Rng, size: usize) -> Tensor {
    let (a, b) = (random_color(rng), random_color(rng));
    let theta = rng.uniform() * std::f64::consts::TAU;
    let (dx, dy) = (theta.cos(), theta.sin());
    let grain = wave_field(rng, size, 6.0, 12.0);
    let amp = 0.04 + 0.06 * rng.uniform();
    let half = size as f64 / 2.0;
    let reach = half * (dx.abs() + dy.abs());
    paint(size, |x, y| {
        let t = 0.5 + ((x - half) * dx + (y - half) * dy) / (2.0 * reach);
        let g = amp * (grain[y as usize * size + x as usize] - 0.5);
        [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t + g)
    })
}

/// A few random half-planes with soft (sub-pixel) boundaries over a flat background.
fn gen_edges(rng: &mut Rng, size: usize) -> Tensor {
    let bg = random_color(rng);
    let n = 2 + rng.below(3);
    let planes: Vec<([f64; 3], f64, f64, f64)> = (0..n)
        .map(|_| {
            let theta = rng.uniform() * std::f64::consts::TAU;
            let offset = (rng.uniform() - 0.5) * size as f64 * 0.8;
            (random_color(rng), theta.cos(), theta.sin(), offset)
        })
        .collect();
    let half = size as f64 / 2.0;
    paint(size, |x, y| {
        let mut v = bg;
        for (col, dx, dy, off) in &planes {
            let d = (x - half) * dx + (y - half) * dy - off;
            let t = smoothstep(d + 0.5);
            for c in 0..3 {
                v[c] += (col[c] - v[c]) * t;
            }
        }
        v
    })
}

/// Rotated two-color checkerboard with a random period.
fn gen_checker(rng: &mut Rng, size: usize) -> Tensor {
    let (a, b) = (random_color(rng), random_color(rng));
    let period = 3.0 + rng.uniform() * 9.0;
    let theta = rng.uniform() * std::f64::consts::FRAC_PI_2;
    let (ct, st) = (theta.cos(), theta.sin());
    paint(size, |x, y| {
        let u = (x * ct + y * st) / period;
        let v = (-x * st + y * ct) / period;
        let t = ((u.floor() + v.floor()) as i64).rem_euclid(2) as f64;
        [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
    })
}

/// Deterministic synthetic corpus of `n` RGB `size`x`size` patches cycling
/// through band-limited noise, grained linear gradients, soft-edged
/// half-planes and rotated checkerboards.
pub fn make_synthetic_corpus(seed: u64, n: usize, size: usize) -> Result<Corpus> {
    if n == 0 || size == 0 {
        return Err(Error::invalid("corpus needs at least one non-empty patch"));
    }
    let mut patches = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::derive(seed, i as u64);
        let generator = Generator::ALL[i % Generator::ALL.len()];
        let p = match generator {
            Generator::Noise => gen_noise(&mut rng, size),
            Generator::Gradient => gen_gradient(&mut rng, size),
            Generator::Edges => gen_edges(&mut rng, size),
            Generator::Checker => gen_checker(&mut rng, size),
        };
        patches.push(p);
        provenance.push(Provenance::Synthetic { generator, index: i });
    }
    Corpus::new(patches, provenance)
}

/// Random `size`x`size` crops from image files, `per_image` from each, in
/// path order. Gray images are replicated to three channels.
pub fn corpus_from_images(paths: &[PathBuf], size: usize, per_image: usize, seed: u64) -> Result<Corpus> {
    let mut patches = Vec::new();
    let mut provenance = Vec::new();
    for (k, path) in paths.iter().enumerate() {
        let img = load_image(path)?;
        if img.width() < size || img.height() < size {
            return Err(Error::invalid(format!("{} is smaller than the {size}px patch size", path.display())));
        }
        let rgb = img.to_rgb()?.to_tensor();
        let mut rng = Rng::derive(seed, k as u64);
        for _ in 0..per_image {
            let x = rng.below(img.width() - size + 1);
            let y = rng.below(img.height() - size + 1);
            patches.push(crop_tensor(&rgb, x, y, size));
            provenance.push(Provenance::File { path: path.clone(), x, y });
        }
    }
    Corpus::new(patches, provenance)
}

fn crop_tensor(t: &Tensor, x0: usize, y0: usize, size: usize) -> Tensor {
    Tensor::from_fn([1, t.channels(), size, size], |_, c, y, x| t.at(0, c, y0 + y, x0 + x)).expect("finite")
}

/// Where the training patches come from; recorded so a run can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic { n: usize, seed: u64 },
    Images { paths: Vec<PathBuf>, per_image: usize, seed: u64 },
}

impl CorpusSource {
    pub fn build(&self, patch_size: usize) -> Result<Corpus> {
        match self {
            CorpusSource::Synthetic { n, seed } => make_synthetic_corpus(*seed, *n, patch_size),
            CorpusSource::Images { paths, per_image, seed } => corpus_from_images(paths, patch_size, *per_image, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub seed: u64,
    pub patch_size: usize,
    pub corpus: CorpusSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            loss: LossKind::Mse,
            seed: 0,
            patch_size: 48,
            corpus: CorpusSource::Synthetic { n: 250, seed: 0 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size % scale != 0 {
            return Err(Error::invalid(format!("patch size {} is not a multiple of scale {scale}", self.patch_size)));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub heldout: HeldoutQuality,
    pub heldout_count: usize,
}

impl TrainReport {
    /// Pooled held-out gain over bicubic upscaling. Pooling keeps the gate
    /// from being decided by near-lossless patches (linear ramps, which
    /// cubic interpolation reproduces exactly).
    pub fn gain_db(&self) -> f64 {
        self.heldout.model_psnr - self.heldout.bicubic_psnr
    }

    pub fn passes_gate(&self) -> bool {
        self.gain_db() >= GATE_DB
    }
}

/// Chain with He-initialized upscaler parameters drawn from `seed`.
pub fn init_chain(architecture: &str, down: Downscaler, seed: u64) -> Result<ModelChain> {
    let mut up = Upscaler::from_architecture(architecture)?;
    up.init(&mut Rng::derive(seed, INIT_STREAM));
    ModelChain::new(down, up)
}

/// Default chain: bicubic `g` and the default `f` for `scale`, initialized from `seed`.
pub fn default_chain(scale: usize, seed: u64) -> Result<ModelChain> {
    init_chain(&Upscaler::default_architecture(3, scale), Downscaler::Bicubic(BicubicOp::new(scale)?), seed)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

fn apply_update(opt: Optimizer, lr: f64, params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    match opt {
        Optimizer::Sgd => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g),
        Optimizer::Adam => {
            state.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(state.t);
            let c2 = 1.0 - ADAM_BETA2.powi(state.t);
            for i in 0..params.len() {
                let g = grads[i];
                state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
                state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
                params[i] -= lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn sum_grads(acc: &mut [LayerGrad], add: &[LayerGrad]) {
    for (a, b) in acc.iter_mut().zip(add) {
        a.add_assign(b);
    }
}

fn update_stack(stack: &mut ConvStack, grads: &[LayerGrad], scale: f64, cfg: &TrainConfig, state: &mut AdamState) -> Result<()> {
    let mut params = stack.params_flat();
    let g: Vec<f64> = grads_flat(grads).into_iter().map(|v| v * scale).collect();
    apply_update(cfg.optimizer, cfg.learning_rate, &mut params, &g, state);
    stack.set_params_flat(&params)
}

/// Held-out Y-PSNR of the model `f(g(p))` and of bicubic upscaling `up(g(p))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutQuality {
    /// PSNR of the squared error pooled over all held-out patches.
    pub model_psnr: f64,
    pub bicubic_psnr: f64,
    /// Unweighted mean of per-patch PSNR.
    pub model_mean_psnr: f64,
    pub bicubic_mean_psnr: f64,
}

/// PSNR of the mean of the per-image squared errors implied by `psnrs` (peak 1).
pub fn pooled_psnr(psnrs: &[f64]) -> f64 {
    let mse = psnrs.iter().map(|p| 10f64.powf(-p / 10.0)).sum::<f64>() / psnrs.len() as f64;
    -10.0 * mse.log10()
}

pub fn heldout_quality(chain: &ModelChain, patches: &[Tensor]) -> Result<HeldoutQuality> {
    if patches.is_empty() {
        return Err(Error::invalid("no held-out patches"));
    }
    let bicubic = BicubicOp::new(chain.scale())?;
    let scores: Vec<(f64, f64)> = patches
        .par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let x = chain.downscale(p)?;
            let net = quality_y(&chain.upscale(&x)?, p, 0)?.psnr_y;
            let bic = quality_y(&bicubic.up(&x)?, p, 0)?.psnr_y;
            Ok((net, bic))
        })
        .collect::<Result<_>>()?;
    let (net, bic): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(HeldoutQuality {
        model_psnr: pooled_psnr(&net),
        bicubic_psnr: pooled_psnr(&bic),
        model_mean_psnr: mean(&net),
        bicubic_mean_psnr: mean(&bic),
    })
}

/// Minimizes `L(f(g(p)), p)` over the training split, starting from the
/// parameters already in `chain`. Batch order is a seeded shuffle per epoch;
/// per-sample gradients may be computed in parallel but are summed in sample
/// order, so results do not depend on the thread count. `on_epoch` sees the
/// epoch index and its mean loss.
pub fn train(
    chain: &ModelChain,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelChain, TrainReport)> {
    cfg.validate(chain.scale())?;
    if corpus.len() < 2 {
        return Err(Error::invalid("training needs at least two patches (one is held out)"));
    }
    let size = corpus.patches[0].height();
    if corpus.patches[0].width() != size || size != cfg.patch_size {
        return Err(Error::invalid(format!("corpus patches are not {0}x{0}", cfg.patch_size)));
    }
    let mut chain = chain.clone();
    let train_set = corpus.train_split();
    let fixed_down = match &chain.down {
        Downscaler::Bicubic(_) => Some(train_set.iter().map(|p| chain.downscale(p)).collect::<Result<Vec<_>>>()?),
        Downscaler::Learned(_) => None,
    };
    let mut up_state = AdamState::new(chain.up.stack.param_count());
    let mut down_state = match &chain.down {
        Downscaler::Learned(d) => AdamState::new(d.stack.param_count()),
        Downscaler::Bicubic(_) => AdamState::new(0),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        Rng::derive(cfg.seed, SHUFFLE_STREAM ^ ((epoch as u64) << 16)).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<(f64, Vec<LayerGrad>, Option<Vec<LayerGrad>>)> = batch
                .par_iter()
                .map(|&i| match &fixed_down {
                    Some(xs) => chain.grad_params(&xs[i], &train_set[i], cfg.loss).map(|(l, g)| (l, g, None)),
                    None => chain.grad_all_params(&train_set[i], cfg.loss).map(|(l, g)| (l, g.up, g.down)),
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
                    e => e,
                })?;
            let mut up_acc = chain.up.stack.zero_grads();
            let mut down_acc: Option<Vec<LayerGrad>> = None;
            let mut batch_loss = 0.0;
            for (l, gu, gd) in &per_sample {
                batch_loss += l;
                sum_grads(&mut up_acc, gu);
                if let Some(gd) = gd {
                    match &mut down_acc {
                        Some(acc) => sum_grads(acc, gd),
                        None => down_acc = Some(gd.clone()),
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: batch_loss });
            }
            epoch_loss += batch_loss;
            let k = 1.0 / batch.len() as f64;
            update_stack(&mut chain.up.stack, &up_acc, k, cfg, &mut up_state)?;
            if let (Downscaler::Learned(d), Some(acc)) = (&mut chain.down, &down_acc) {
                update_stack(&mut d.stack, acc, k, cfg, &mut down_state)?;
            }
            if chain.up.stack.params_flat().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
        }
        let mean = epoch_loss / train_set.len() as f64;
        if loss_curve.first().is_some_and(|&first: &f64| mean > DIVERGENCE_RATIO * first.max(f64::MIN_POSITIVE)) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        loss_curve.push(mean);
        on_epoch(epoch, mean);
    }

    let heldout = corpus.heldout();
    let quality = heldout_quality(&chain, heldout)?;
    Ok((chain, TrainReport { loss_curve, heldout: quality, heldout_count: heldout.len() }))
}

/// Writes `epoch,loss` rows.
pub fn write_loss_csv(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{l:e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
