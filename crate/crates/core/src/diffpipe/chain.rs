use super::bicubic::BicubicOp;
use super::conv::LayerGrad;
use super::loss::{loss_and_grad, LossKind};
use super::network::{LearnedDownscaler, StackTrace, Upscaler};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The downscaling model `g`.
#[derive(Clone, Debug, PartialEq)]
pub enum Downscaler {
    Bicubic(BicubicOp),
    Learned(LearnedDownscaler),
}

impl Downscaler {
    pub fn scale(&self) -> usize {
        match self {
            Downscaler::Bicubic(op) => op.scale(),
            Downscaler::Learned(d) => d.scale(),
        }
    }

    fn check_hr(&self, y: &Tensor) -> Result<()> {
        let s = self.scale();
        if y.height() % s != 0 || y.width() % s != 0 || y.height() == 0 || y.width() == 0 {
            return Err(Error::invalid(format!("{}x{} is not divisible by scale {s}", y.height(), y.width())));
        }
        Ok(())
    }

    pub fn down(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.down_traced(y)?.0)
    }

    fn down_traced(&self, y: &Tensor) -> Result<(Tensor, Vec<StackTrace>)> {
        self.check_hr(y)?;
        match self {
            Downscaler::Bicubic(op) => Ok((op.down(y)?, Vec::new())),
            Downscaler::Learned(d) => {
                if y.channels() != d.stack.in_channels() {
                    return Err(Error::invalid("channel mismatch in learned downscaler"));
                }
                let [b, _, h, w] = y.shape();
                let c = d.stack.out_channels();
                let (oh, ow) = (h / d.scale(), w / d.scale());
                let mut data = Vec::with_capacity(b * c * oh * ow);
                let mut traces = Vec::with_capacity(b);
                for i in 0..b {
                    let item = y.item(i);
                    let trace = d.stack.forward_item(item.data(), h, w);
                    data.extend_from_slice(trace.preacts.last().unwrap());
                    traces.push(trace);
                }
                let out = Tensor::from_raw([b, c, oh, ow], data);
                out.ensure_finite("learned downscaler")?;
                Ok((out, traces))
            }
        }
    }

    /// Pulls an LR gradient back to HR space, optionally accumulating
    /// parameter gradients of a learned downscaler.
    fn backward(
        &self,
        y: &Tensor,
        traces: &[StackTrace],
        grad_x: &Tensor,
        mut grads: Option<&mut [LayerGrad]>,
    ) -> Result<Tensor> {
        match self {
            Downscaler::Bicubic(op) => op.adjoint(grad_x),
            Downscaler::Learned(d) => {
                let [b, c, h, w] = y.shape();
                let mut data = Vec::with_capacity(y.len());
                for (i, trace) in traces.iter().enumerate().take(b) {
                    let item = y.item(i);
                    let g = grad_x.item(i).into_data();
                    let gi = d.stack.backward_item(item.data(), trace, g, true, grads.as_deref_mut()).unwrap();
                    data.extend_from_slice(&gi);
                }
                Ok(Tensor::from_raw([b, c, h, w], data))
            }
        }
    }
}

/// Per-image upscaler pre-activations recorded by [`ModelChain::forward`].
#[derive(Clone, Debug)]
pub struct ActivationTape {
    traces: Vec<StackTrace>,
}

impl ActivationTape {
    /// Pre-activation of `layer` for batch item `item`, `[channels, h, w]`.
    pub fn preactivation(&self, item: usize, layer: usize) -> &[f64] {
        &self.traces[item].preacts[layer]
    }

    /// Smallest `|pre-activation|` over every ReLU input (all layers but the last).
    pub fn min_relu_margin(&self) -> f64 {
        self.traces
            .iter()
            .flat_map(|t| t.preacts[..t.preacts.len() - 1].iter().flatten())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// The fixed rescaling chain `(g, f)` sharing one scale factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelChain {
    pub down: Downscaler,
    pub up: Upscaler,
}

/// Parameter gradients of a whole chain.
#[derive(Clone, Debug)]
pub struct ChainGrads {
    pub up: Vec<LayerGrad>,
    pub down: Option<Vec<LayerGrad>>,
}

impl ModelChain {
    pub fn new(down: Downscaler, up: Upscaler) -> Result<Self> {
        if down.scale() != up.scale() {
            return Err(Error::invalid(format!(
                "downscaler scale {} != upscaler scale {}",
                down.scale(),
                up.scale()
            )));
        }
        Ok(ModelChain { down, up })
    }

    pub fn with_bicubic(up: Upscaler) -> Result<Self> {
        let op = BicubicOp::new(up.scale())?;
        ModelChain::new(Downscaler::Bicubic(op), up)
    }

    pub fn scale(&self) -> usize {
        self.up.scale()
    }

    pub fn downscale(&self, y: &Tensor) -> Result<Tensor> {
        self.down.down(y)
    }

    pub fn upscale(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ActivationTape)> {
        self.up.check_input(x)?;
        let [b, _, h, w] = x.shape();
        let s = self.scale();
        let c = self.up.image_channels();
        let mut data = Vec::with_capacity(b * c * h * s * w * s);
        let mut traces = Vec::with_capacity(b);
        for i in 0..b {
            let item = x.item(i);
            let (out, trace) = self.up.forward_item(item.data(), h, w);
            data.extend_from_slice(&out);
            traces.push(trace);
        }
        let y = Tensor::from_raw([b, c, h * s, w * s], data);
        y.ensure_finite("upscaler forward")?;
        Ok((y, ActivationTape { traces }))
    }

    fn backward_up(
        &self,
        x: &Tensor,
        tape: &ActivationTape,
        grad_y: &Tensor,
        want_input: bool,
        mut grads: Option<&mut [LayerGrad]>,
    ) -> Option<Tensor> {
        let [b, c, h, w] = x.shape();
        let mut data = if want_input { Vec::with_capacity(x.len()) } else { Vec::new() };
        for i in 0..b {
            let item = x.item(i);
            let g = grad_y.item(i);
            let gi = self.up.backward_item(item.data(), &tape.traces[i], g.data(), want_input, grads.as_deref_mut());
            if let Some(gi) = gi {
                data.extend_from_slice(&gi);
            }
        }
        want_input.then(|| Tensor::from_raw([b, c, h, w], data))
    }

    /// `L(f(x), y_ref)` and its gradient with respect to `x`.
    pub fn grad_input(&self, x: &Tensor, y_ref: &Tensor, loss: LossKind) -> Result<(f64, Tensor)> {
        let (y_hat, tape) = self.forward(x)?;
        let (value, gy) = loss_and_grad(loss, &y_hat, y_ref)?;
        let gx = self.backward_up(x, &tape, &gy, true, None).unwrap();
        gx.ensure_finite("grad_input")?;
        Ok((value, gx))
    }

    /// `L(f(g(y_hr)), y_ref)` and its gradient with respect to `y_hr`.
    pub fn grad_input_full(&self, y_hr: &Tensor, y_ref: &Tensor, loss: LossKind) -> Result<(f64, Tensor)> {
        let (x, traces) = self.down.down_traced(y_hr)?;
        let (value, gx) = self.grad_input(&x, y_ref, loss)?;
        let gy = self.down.backward(y_hr, &traces, &gx, None)?;
        gy.ensure_finite("grad_input_full")?;
        Ok((value, gy))
    }

    /// `L(f(x), y_ref)` and its gradient with respect to the upscaler parameters.
    pub fn grad_params(&self, x: &Tensor, y_ref: &Tensor, loss: LossKind) -> Result<(f64, Vec<LayerGrad>)> {
        let (y_hat, tape) = self.forward(x)?;
        let (value, gy) = loss_and_grad(loss, &y_hat, y_ref)?;
        let mut grads = self.up.stack.zero_grads();
        self.backward_up(x, &tape, &gy, false, Some(&mut grads));
        Ok((value, grads))
    }

    /// `L(f(g(y)), y)` with gradients for every trainable parameter
    /// (the downscaler's only when it is learned).
    pub fn grad_all_params(&self, y: &Tensor, loss: LossKind) -> Result<(f64, ChainGrads)> {
        let (x, traces) = self.down.down_traced(y)?;
        let (y_hat, tape) = self.forward(&x)?;
        let (value, gy) = loss_and_grad(loss, &y_hat, y)?;
        let mut up = self.up.stack.zero_grads();
        let learned = matches!(self.down, Downscaler::Learned(_));
        let gx = self.backward_up(&x, &tape, &gy, learned, Some(&mut up));
        let down = match (&self.down, gx) {
            (Downscaler::Learned(d), Some(gx)) => {
                let mut dg = d.stack.zero_grads();
                self.down.backward(y, &traces, &gx, Some(&mut dg))?;
                Some(dg)
            }
            _ => None,
        };
        Ok((value, ChainGrads { up, down }))
    }
}
