//! Perturbation engine: epsilon-ball projection, normalized-gradient steps
//! and single-domain collaborative (descend) or adversarial (ascend) example
//! generation against a fixed [`ModelChain`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffpipe::{loss, LossKind, ModelChain};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Gradients with a smaller l2 norm than this leave the perturbation unchanged.
pub const STATIONARY_GRAD_NORM: f64 = 1e-20;

/// Half-width of the `UniformSmall` initialization.
pub const SMALL_INIT: f64 = 1e-3;

/// Relative slack under which a perturbation counts as inside the ball, so
/// projecting an already-projected tensor is a no-op.
const PROJECT_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Collaborative: reduce the reconstruction loss.
    #[default]
    Descend,
    /// Adversarial: increase it.
    Ascend,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// l2 radius is `epsilon`.
    Absolute,
    /// l2 radius is `epsilon * sqrt(#elements)`, i.e. epsilon bounds the RMS change.
    #[default]
    PerElementScaled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zero,
    /// i.i.d. uniform in `±SMALL_INIT`.
    UniformSmall,
    /// i.i.d. uniform direction rescaled onto the ball boundary.
    UniformBall,
}

macro_rules! str_enum {
    ($ty:ty { $($name:literal => $var:expr),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $var { return f.write_str($name); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($var),)+
                    other => Err(Error::invalid(format!("unknown {} {other:?}", stringify!($ty)))),
                }
            }
        }
    };
}

str_enum!(Norm { "l2" => Norm::L2, "linf" => Norm::Linf });
str_enum!(Direction { "descend" => Direction::Descend, "ascend" => Direction::Ascend });
str_enum!(RadiusMode { "absolute" => RadiusMode::Absolute, "per_element_scaled" => RadiusMode::PerElementScaled });
str_enum!(Init { "zero" => Init::Zero, "uniform_small" => Init::UniformSmall, "uniform_ball" => Init::UniformBall });

/// Budget, step size and schedule of one perturbation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    pub norm: Norm,
    pub direction: Direction,
    pub radius_mode: RadiusMode,
    /// Saturate the final `input + delta` to `[0, 1]`. Never applied inside the loop.
    pub pixel_clamp: bool,
    pub init: Init,
    pub seed: u64,
    pub loss: LossKind,
}

pub const DEFAULT_EPSILON: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 20.0 / 255.0;
pub const DEFAULT_ITERS: usize = 15;

/// Mean element count of a Set5 low-resolution image at 2x (RGB), the input
/// size the default `alpha` and absolute `epsilon` are calibrated for.
pub const REFERENCE_LR_NUMEL: usize = 85_118;

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
            iters: DEFAULT_ITERS,
            norm: Norm::L2,
            direction: Direction::Descend,
            radius_mode: RadiusMode::PerElementScaled,
            pixel_clamp: true,
            init: Init::Zero,
            seed: 0,
            loss: LossKind::Mse,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be finite and positive, got {}", self.epsilon)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be finite and positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Ball radius for a perturbation with `numel` elements. For `Linf` this
    /// is the per-element bound.
    pub fn effective_radius(&self, numel: usize) -> f64 {
        match (self.norm, self.radius_mode) {
            (Norm::Linf, _) | (Norm::L2, RadiusMode::Absolute) => self.epsilon,
            (Norm::L2, RadiusMode::PerElementScaled) => self.epsilon * (numel as f64).sqrt(),
        }
    }

    /// Same per-element step and l2 budget on inputs with `numel` elements
    /// instead of `reference_numel`: `alpha` (and `epsilon` in absolute l2
    /// mode) are multiplied by `sqrt(numel / reference_numel)`.
    pub fn rescaled(&self, numel: usize, reference_numel: usize) -> PerturbConfig {
        let k = (numel as f64 / reference_numel as f64).sqrt();
        let mut out = self.clone();
        out.alpha *= k;
        if self.norm == Norm::L2 && self.radius_mode == RadiusMode::Absolute {
            out.epsilon *= k;
        }
        out
    }

    /// Size of `delta` in the configured norm.
    pub fn measure(&self, delta: &Tensor) -> f64 {
        match self.norm {
            Norm::L2 => delta.l2_norm(),
            Norm::Linf => delta.max_abs(),
        }
    }
}

/// Projects onto the configured ball: radial shrink for l2, per-element
/// clamp for linf.
pub fn project(delta: &Tensor, cfg: &PerturbConfig) -> Tensor {
    let r = cfg.effective_radius(delta.len());
    match cfg.norm {
        Norm::L2 => {
            let n = delta.l2_norm();
            if n <= r * (1.0 + PROJECT_SLACK) {
                delta.clone()
            } else {
                let k = r / n;
                Tensor::from_raw(delta.shape(), delta.data().iter().map(|v| v * k).collect())
            }
        }
        Norm::Linf => Tensor::from_raw(delta.shape(), delta.data().iter().map(|v| v.clamp(-r, r)).collect()),
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub delta: Tensor,
    /// The gradient was (numerically) zero and `delta` was returned unchanged.
    pub stationary: bool,
}

/// `project(delta ∓ alpha * grad / ‖grad‖₂)`, minus for descend.
pub fn step(delta: &Tensor, grad: &Tensor, cfg: &PerturbConfig) -> Result<StepOutcome> {
    if delta.shape() != grad.shape() {
        return Err(Error::ShapeMismatch { left: delta.shape(), right: grad.shape() });
    }
    let gn = grad.l2_norm();
    if gn < STATIONARY_GRAD_NORM {
        return Ok(StepOutcome { delta: delta.clone(), stationary: true });
    }
    let k = match cfg.direction {
        Direction::Descend => -cfg.alpha / gn,
        Direction::Ascend => cfg.alpha / gn,
    };
    let moved = delta.add_scaled(grad, k)?;
    Ok(StepOutcome { delta: project(&moved, cfg), stationary: false })
}

/// Trace and result of one perturbation run.
#[derive(Clone, Debug, Serialize)]
pub struct OptRun {
    pub config: PerturbConfig,
    pub effective_radius: f64,
    /// `iters + 1` entries; index 0 is the loss before any step.
    pub loss_trace: Vec<f64>,
    /// `‖delta‖` after initialization and after every step.
    pub delta_norm_trace: Vec<f64>,
    pub stationary_steps: usize,
    #[serde(skip)]
    pub final_delta: Tensor,
    #[serde(skip)]
    pub final_input: Tensor,
}

impl OptRun {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap()
    }

    /// Largest recorded `‖delta‖` minus the effective radius; positive
    /// values would mean the ball constraint was broken.
    pub fn radius_excess(&self) -> f64 {
        self.delta_norm_trace.iter().fold(f64::NEG_INFINITY, |m, &n| m.max(n - self.effective_radius))
    }
}

pub(crate) fn initial_delta(cfg: &PerturbConfig, base: &Tensor) -> Result<Tensor> {
    let shape = base.shape();
    if cfg.iters == 0 {
        return Ok(Tensor::zeros(shape));
    }
    let mut rng = Rng::derive(cfg.seed, 0x1417);
    let d = match cfg.init {
        Init::Zero => Tensor::zeros(shape),
        Init::UniformSmall => Tensor::random_uniform(&mut rng, shape, -SMALL_INIT, SMALL_INIT)?,
        Init::UniformBall => {
            let raw = Tensor::random_uniform(&mut rng, shape, -1.0, 1.0)?;
            let r = cfg.effective_radius(raw.len());
            match cfg.norm {
                Norm::L2 => raw.scale(r / raw.l2_norm().max(f64::MIN_POSITIVE))?,
                Norm::Linf => raw.scale(r)?,
            }
        }
    };
    Ok(project(&d, cfg))
}

/// Runs `cfg.iters` normalized steps from `delta0`. `eval` maps a perturbed
/// input to `(loss, dloss/dinput)`; `value` maps it to the loss alone.
pub(crate) fn run_pgd(
    base: &Tensor,
    delta0: Tensor,
    cfg: &PerturbConfig,
    mut eval: impl FnMut(&Tensor) -> Result<(f64, Tensor)>,
    mut value: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<OptRun> {
    cfg.validate()?;
    let mut delta = delta0;
    let mut loss_trace = Vec::with_capacity(cfg.iters + 1);
    let mut delta_norm_trace = Vec::with_capacity(cfg.iters + 1);
    delta_norm_trace.push(cfg.measure(&delta));
    let mut stationary_steps = 0;
    for _ in 0..cfg.iters {
        let input = base.add(&delta)?;
        let (l, g) = eval(&input)?;
        loss_trace.push(l);
        let out = step(&delta, &g, cfg)?;
        stationary_steps += out.stationary as usize;
        delta = out.delta;
        delta_norm_trace.push(cfg.measure(&delta));
    }
    let last = base.add(&delta)?;
    loss_trace.push(value(&last)?);
    let final_input = if cfg.pixel_clamp { last.clamp(0.0, 1.0)? } else { last };
    Ok(OptRun {
        config: cfg.clone(),
        effective_radius: cfg.effective_radius(base.len()),
        loss_trace,
        delta_norm_trace,
        stationary_steps,
        final_delta: delta,
        final_input,
    })
}

/// Collaborative (or adversarial) LR example: perturbs `x` so that
/// `f(x + delta)` moves toward (or away from) `y_ref`.
pub fn optimize_lr(chain: &ModelChain, x: &Tensor, y_ref: &Tensor, cfg: &PerturbConfig) -> Result<OptRun> {
    let delta0 = initial_delta(cfg, x)?;
    optimize_lr_from(chain, x, y_ref, cfg, delta0)
}

pub(crate) fn optimize_lr_from(
    chain: &ModelChain,
    x: &Tensor,
    y_ref: &Tensor,
    cfg: &PerturbConfig,
    delta0: Tensor,
) -> Result<OptRun> {
    run_pgd(
        x,
        delta0,
        cfg,
        |xin| chain.grad_input(xin, y_ref, cfg.loss),
        |xin| loss(cfg.loss, &chain.upscale(xin)?, y_ref),
    )
}

/// Collaborative HR example: perturbs `y` so that `f(g(y + delta))`
/// reconstructs the original `y` better.
pub fn optimize_hr(chain: &ModelChain, y: &Tensor, cfg: &PerturbConfig) -> Result<OptRun> {
    let delta0 = initial_delta(cfg, y)?;
    optimize_hr_from(chain, y, cfg, delta0, None)
}

/// HR phase with an optional fixed LR offset added after downscaling, i.e.
/// the objective `L(f(g(y + delta) + lr_offset), y)`.
pub(crate) fn optimize_hr_from(
    chain: &ModelChain,
    y: &Tensor,
    cfg: &PerturbConfig,
    delta0: Tensor,
    lr_offset: Option<&Tensor>,
) -> Result<OptRun> {
    let lr_of = |yin: &Tensor| -> Result<Tensor> {
        let x = chain.downscale(yin)?;
        match lr_offset {
            Some(o) => x.add(o),
            None => Ok(x),
        }
    };
    run_pgd(
        y,
        delta0,
        cfg,
        |yin| match lr_offset {
            None => chain.grad_input_full(yin, y, cfg.loss),
            Some(_) => {
                let (l, gx) = chain.grad_input(&lr_of(yin)?, y, cfg.loss)?;
                let gy = match &chain.down {
                    crate::diffpipe::Downscaler::Bicubic(op) => op.adjoint(&gx)?,
                    crate::diffpipe::Downscaler::Learned(_) => {
                        return Err(Error::invalid("multi-round HCD needs a bicubic downscaler"))
                    }
                };
                Ok((l, gy))
            }
        },
        |yin| loss(cfg.loss, &chain.upscale(&lr_of(yin)?)?, y),
    )
}
