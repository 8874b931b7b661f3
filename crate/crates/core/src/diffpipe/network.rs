//! Conv/ReLU stacks: the upscaler `f` (ending in depth-to-space) and the
//! optional learned strided downscaler.
//!
//! Architecture strings are whitespace-separated tokens:
//! `conv<k>[/<stride>]:<in>><out>`, `relu`, and for upscalers a trailing
//! `shuffle<s>`, optionally followed by `+bicubic` for a residual skip.
//! Example (the default 2x upscaler):
//! `conv5:3>32 relu conv3:32>32 relu conv3:32>12 shuffle2 +bicubic`.

use std::fmt::Write as _;

use super::bicubic::BicubicOp;
use super::conv::{ConvLayer, LayerGrad};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

/// Per-layer pre-activations of one image plus their spatial extents.
#[derive(Clone, Debug)]
pub(crate) struct StackTrace {
    pub preacts: Vec<Vec<f64>>,
    pub dims: Vec<(usize, usize)>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

impl ConvStack {
    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("empty conv stack"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::invalid(format!(
                    "channel mismatch between layers: {} -> {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn arch_tokens(&self, out: &mut String) {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                out.push_str(" relu ");
            }
            write!(out, "conv{}", l.kernel).unwrap();
            if l.stride != 1 {
                write!(out, "/{}", l.stride).unwrap();
            }
            write!(out, ":{}>{}", l.in_channels, l.out_channels).unwrap();
        }
    }

    pub(crate) fn forward_item(&self, x: &[f64], h: usize, w: usize) -> StackTrace {
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push((h, w));
        let mut current: Option<Vec<f64>> = None;
        let (mut ch, mut cw) = (h, w);
        for layer in &self.layers {
            let input = current.as_deref().unwrap_or(x);
            let pre = layer.forward(input, ch, cw);
            let (nh, nw) = layer.output_size(ch, cw);
            ch = nh;
            cw = nw;
            dims.push((ch, cw));
            current = Some(relu(&pre));
            preacts.push(pre);
        }
        StackTrace { preacts, dims }
    }

    /// `grad` is with respect to the last layer's pre-activation.
    pub(crate) fn backward_item(
        &self,
        x: &[f64],
        trace: &StackTrace,
        mut grad: Vec<f64>,
        want_input: bool,
        mut grads: Option<&mut [LayerGrad]>,
    ) -> Option<Vec<f64>> {
        for l in (0..self.layers.len()).rev() {
            let relu_in;
            let input: &[f64] = if l == 0 {
                x
            } else {
                relu_in = relu(&trace.preacts[l - 1]);
                &relu_in
            };
            let (h, w) = trace.dims[l];
            let pg = grads.as_deref_mut().map(|g| &mut g[l]);
            let g_in = self.layers[l].backward(input, h, w, &grad, want_input || l > 0, pg);
            match g_in {
                Some(mut g) if l > 0 => {
                    // ReLU derivative, 0 at the kink
                    g.iter_mut().zip(&trace.preacts[l - 1]).for_each(|(gv, &p)| {
                        if p <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    grad = g;
                }
                other => return other,
            }
        }
        None
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers.iter().map(LayerGrad::zeros_like).collect()
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.layers.iter_mut().for_each(|l| l.he_init(rng));
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

pub fn grads_flat(grads: &[LayerGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(&g.weights);
        out.extend_from_slice(&g.bias);
    }
    out
}

fn parse_conv(tok: &str) -> Result<(usize, usize, usize, usize)> {
    let bad = || Error::invalid(format!("bad conv token {tok:?}"));
    let body = tok.strip_prefix("conv").ok_or_else(bad)?;
    let (ks, chans) = body.split_once(':').ok_or_else(bad)?;
    let (k, stride) = match ks.split_once('/') {
        Some((k, s)) => (k.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?),
        None => (ks.parse().map_err(|_| bad())?, 1),
    };
    let (cin, cout) = chans.split_once('>').ok_or_else(bad)?;
    Ok((k, stride, cin.parse().map_err(|_| bad())?, cout.parse().map_err(|_| bad())?))
}

/// Parses `conv ... (relu conv)*` followed by an optional `shuffle<s>`.
fn parse_stack(arch: &str) -> Result<(ConvStack, Option<usize>)> {
    let mut layers = Vec::new();
    let mut shuffle = None;
    let mut expect_conv = true;
    for tok in arch.split_whitespace() {
        if shuffle.is_some() {
            return Err(Error::invalid("tokens after shuffle"));
        }
        match tok {
            "relu" if !expect_conv => expect_conv = true,
            t if t.starts_with("shuffle") && !expect_conv => {
                let s: usize = t["shuffle".len()..].parse().map_err(|_| Error::invalid(format!("bad token {t:?}")))?;
                shuffle = Some(s);
            }
            t if t.starts_with("conv") && expect_conv => {
                let (k, stride, cin, cout) = parse_conv(t)?;
                layers.push(ConvLayer::zeros(cin, cout, k, stride)?);
                expect_conv = false;
            }
            t => return Err(Error::invalid(format!("unexpected token {t:?} in architecture"))),
        }
    }
    if expect_conv {
        return Err(Error::invalid("architecture must end with a conv layer"));
    }
    let stack = ConvStack { layers };
    stack.validate()?;
    Ok((stack, shuffle))
}

/// Depth-to-space: `[c*s*s, h, w] -> [c, h*s, w*s]` with
/// `out[c, y*s + i, x*s + j] = in[c*s*s + i*s + j, y, x]`.
pub fn pixel_shuffle(input: &[f64], channels_out: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; channels_out * oh * ow];
    for c in 0..channels_out {
        for i in 0..s {
            for j in 0..s {
                let src = &input[((c * s + i) * s + j) * h * w..][..h * w];
                for y in 0..h {
                    let dst = &mut out[(c * oh + y * s + i) * ow..][..ow];
                    for x in 0..w {
                        dst[x * s + j] = src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// Space-to-depth, the exact inverse and transpose of [`pixel_shuffle`].
pub fn pixel_unshuffle(input: &[f64], channels_out: usize, oh: usize, ow: usize, s: usize) -> Vec<f64> {
    let (h, w) = (oh / s, ow / s);
    let mut out = vec![0.0; channels_out * oh * ow];
    for c in 0..channels_out {
        for i in 0..s {
            for j in 0..s {
                let dst = &mut out[((c * s + i) * s + j) * h * w..][..h * w];
                for y in 0..h {
                    let src = &input[(c * oh + y * s + i) * ow..][..ow];
                    for x in 0..w {
                        dst[y * w + x] = src[x * s + j];
                    }
                }
            }
        }
    }
    out
}

/// The upscaling model `f`: conv/ReLU stack whose last layer emits
/// `scale² · C` channels, rearranged to a `scale`-times larger image. With
/// the `+bicubic` suffix the stack predicts a residual on top of bicubic
/// upscaling of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Upscaler {
    scale: usize,
    skip: Option<BicubicOp>,
    pub stack: ConvStack,
}

const SKIP_TOKEN: &str = "+bicubic";

pub const DEFAULT_HIDDEN: usize = 32;

impl Upscaler {
    pub fn from_architecture(arch: &str) -> Result<Self> {
        let (body, skip) = match arch.trim_end().strip_suffix(SKIP_TOKEN) {
            Some(b) => (b, true),
            None => (arch, false),
        };
        let (stack, shuffle) = parse_stack(body)?;
        let scale = shuffle.ok_or_else(|| Error::invalid("upscaler architecture needs a shuffle<s> token"))?;
        if scale < 2 {
            return Err(Error::invalid("upscale factor must be >= 2"));
        }
        if stack.layers.iter().any(|l| l.stride != 1) {
            return Err(Error::invalid("upscaler layers must have stride 1"));
        }
        if stack.out_channels() % (scale * scale) != 0 {
            return Err(Error::invalid(format!(
                "last layer emits {} channels, not a multiple of {}",
                stack.out_channels(),
                scale * scale
            )));
        }
        let skip = if skip { Some(BicubicOp::new(scale)?) } else { None };
        if skip.is_some() && stack.in_channels() * scale * scale != stack.out_channels() {
            return Err(Error::invalid("a bicubic skip needs matching input and output channels"));
        }
        Ok(Upscaler { scale, skip, stack })
    }

    /// `C -> 32 -> 32 -> C·s²`, kernels 5/3/3, residual over bicubic.
    pub fn default_architecture(channels: usize, scale: usize) -> String {
        let h = DEFAULT_HIDDEN;
        format!(
            "conv5:{channels}>{h} relu conv3:{h}>{h} relu conv3:{h}>{} shuffle{scale} {SKIP_TOKEN}",
            channels * scale * scale
        )
    }

    pub fn architecture(&self) -> String {
        let mut s = String::new();
        self.stack.arch_tokens(&mut s);
        write!(s, " shuffle{}", self.scale).unwrap();
        if self.skip.is_some() {
            write!(s, " {SKIP_TOKEN}").unwrap();
        }
        s
    }

    pub fn has_skip(&self) -> bool {
        self.skip.is_some()
    }

    /// He initialization; with a bicubic skip the last layer starts at zero
    /// so the untrained model is exactly bicubic upscaling.
    pub fn init(&mut self, rng: &mut Rng) {
        self.stack.init(rng);
        if self.skip.is_some() {
            let last = self.stack.layers.last_mut().expect("validated stack");
            last.weights.iter_mut().for_each(|w| *w = 0.0);
        }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn image_channels(&self) -> usize {
        self.stack.out_channels() / (self.scale * self.scale)
    }

    pub fn max_radius(&self) -> usize {
        self.stack.layers.iter().map(ConvLayer::pad).max().unwrap_or(0)
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.stack.in_channels() {
            return Err(Error::invalid(format!(
                "upscaler expects {} channels, got {}",
                self.stack.in_channels(),
                x.channels()
            )));
        }
        let r = self.max_radius();
        if x.height() < r.max(1) || x.width() < r.max(1) {
            return Err(Error::invalid(format!("input {}x{} smaller than kernel radius {r}", x.height(), x.width())));
        }
        Ok(())
    }

    pub(crate) fn forward_item(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, StackTrace) {
        let trace = self.stack.forward_item(x, h, w);
        let mut out = pixel_shuffle(trace.preacts.last().unwrap(), self.image_channels(), h, w, self.scale);
        if let Some(op) = &self.skip {
            let base = op.up(&Tensor::from_raw([1, self.image_channels(), h, w], x.to_vec())).expect("checked input");
            out.iter_mut().zip(base.data()).for_each(|(o, b)| *o += b);
        }
        (out, trace)
    }

    pub(crate) fn backward_item(
        &self,
        x: &[f64],
        trace: &StackTrace,
        grad_out: &[f64],
        want_input: bool,
        grads: Option<&mut [LayerGrad]>,
    ) -> Option<Vec<f64>> {
        let (h, w) = trace.dims[0];
        let c = self.image_channels();
        let g = pixel_unshuffle(grad_out, c, h * self.scale, w * self.scale, self.scale);
        let gx = self.stack.backward_item(x, trace, g, want_input, grads);
        match (&self.skip, gx) {
            (Some(op), Some(mut gx)) => {
                let hr = Tensor::from_raw([1, c, h * self.scale, w * self.scale], grad_out.to_vec());
                let extra = op.up_adjoint(&hr).expect("checked extents");
                gx.iter_mut().zip(extra.data()).for_each(|(a, b)| *a += b);
                Some(gx)
            }
            (_, gx) => gx,
        }
    }
}

/// Strided conv stack standing in for a trainable `g`. The first layer has
/// kernel `2s + 1`, stride `s`; any further layers are stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedDownscaler {
    scale: usize,
    pub stack: ConvStack,
}

impl LearnedDownscaler {
    pub fn from_architecture(arch: &str) -> Result<Self> {
        let (stack, shuffle) = parse_stack(arch)?;
        if shuffle.is_some() {
            return Err(Error::invalid("downscaler architecture cannot shuffle"));
        }
        let scale = stack.layers[0].stride;
        if scale < 2 || stack.layers[0].kernel != 2 * scale + 1 {
            return Err(Error::invalid("first downscaler layer must be conv<2s+1>/<s> with s >= 2"));
        }
        if stack.layers[1..].iter().any(|l| l.stride != 1) {
            return Err(Error::invalid("only the first downscaler layer may be strided"));
        }
        if stack.in_channels() != stack.out_channels() {
            return Err(Error::invalid("downscaler must preserve the channel count"));
        }
        Ok(LearnedDownscaler { scale, stack })
    }

    pub fn default_architecture(channels: usize, scale: usize) -> String {
        format!("conv{}/{scale}:{channels}>{channels}", 2 * scale + 1)
    }

    /// Channel-diagonal separable bicubic-like start point: each output
    /// channel averages its own input channel with a tent window.
    pub fn init_smooth(&mut self) {
        for (i, layer) in self.stack.layers.iter_mut().enumerate() {
            let k = layer.kernel;
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
            let taps: Vec<f64> = if i == 0 {
                let c = (k / 2) as f64;
                let raw: Vec<f64> = (0..k).map(|t| (self.scale as f64 + 0.5 - (t as f64 - c).abs()).max(0.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            } else {
                (0..k).map(|t| if t == k / 2 { 1.0 } else { 0.0 }).collect()
            };
            let ch = layer.in_channels.min(layer.out_channels);
            for c in 0..ch {
                for ky in 0..k {
                    for kx in 0..k {
                        layer.weights[((c * layer.in_channels + c) * k + ky) * k + kx] = taps[ky] * taps[kx];
                    }
                }
            }
        }
    }

    pub fn architecture(&self) -> String {
        let mut s = String::new();
        self.stack.arch_tokens(&mut s);
        s
    }

    pub fn scale(&self) -> usize {
        self.scale
    }
}
