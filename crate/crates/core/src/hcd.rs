//! Hierarchical collaborative downscaling: an HR-domain phase that perturbs
//! `y` before the fixed downscaler, followed by an LR-domain phase that
//! perturbs the resulting `x`, both steering `f` toward the original `y`.

use std::fmt;
use std::str::FromStr;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::collab::{
    initial_delta, optimize_hr_from, optimize_lr_from, Direction, OptRun, PerturbConfig, REFERENCE_LR_NUMEL,
};
use crate::diffpipe::{Downscaler, ModelChain};
use crate::error::{Error, Result};
use crate::imaging::{quality_y, Quality};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// HR phase then LR phase.
    #[default]
    Hierarchical,
    LrOnly,
    HrOnly,
    /// Plain `f(g(y))`, no perturbation.
    Baseline,
    /// LR phase with gradient ascent: the adversarial counterpart.
    AdversarialLr,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::Baseline, Scheme::LrOnly, Scheme::HrOnly, Scheme::Hierarchical, Scheme::AdversarialLr];

    /// The four rows of the iteration-scheme ablation.
    pub const ABLATION: [Scheme; 4] = [Scheme::Baseline, Scheme::LrOnly, Scheme::HrOnly, Scheme::Hierarchical];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hierarchical => "hierarchical",
            Scheme::LrOnly => "lr_only",
            Scheme::HrOnly => "hr_only",
            Scheme::Baseline => "baseline",
            Scheme::AdversarialLr => "adversarial_lr",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('_', "-") == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcdConfig {
    /// HR phase; `iters` is N_y.
    pub hr: PerturbConfig,
    /// LR phase; `iters` is N_x.
    pub lr: PerturbConfig,
    pub scheme: Scheme,
    /// Number of HR-then-LR alternations. 1 is the standard single pass;
    /// more rounds warm-start each phase from the previous one.
    pub rounds: usize,
    /// Border pixels excluded from the quality metrics.
    pub shave: usize,
}

impl Default for HcdConfig {
    fn default() -> Self {
        HcdConfig {
            hr: PerturbConfig { seed: 1, ..PerturbConfig::default() },
            lr: PerturbConfig { seed: 2, ..PerturbConfig::default() },
            scheme: Scheme::Hierarchical,
            rounds: 1,
            shave: 0,
        }
    }
}

impl HcdConfig {
    /// Both phases rescaled from `REFERENCE_LR_NUMEL` to an LR input of
    /// `lr_numel` elements (see [`PerturbConfig::rescaled`]). The HR phase
    /// uses the same factor since both sizes grow by `scale²`.
    pub fn rescaled(&self, lr_numel: usize) -> HcdConfig {
        HcdConfig {
            hr: self.hr.rescaled(lr_numel, REFERENCE_LR_NUMEL),
            lr: self.lr.rescaled(lr_numel, REFERENCE_LR_NUMEL),
            ..self.clone()
        }
    }

    /// Same settings with `N_x = N_y = n`.
    pub fn with_iters(mut self, n: usize) -> Self {
        self.hr.iters = n;
        self.lr.iters = n;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// The phase configs actually run once the scheme is applied: skipped
    /// phases get zero iterations and the adversarial scheme ascends.
    pub fn resolved(&self) -> Result<(PerturbConfig, PerturbConfig)> {
        self.hr.validate()?;
        self.lr.validate()?;
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if self.rounds > 1 && self.scheme != Scheme::Hierarchical {
            return Err(Error::invalid(format!("rounds > 1 only applies to the hierarchical scheme, not {}", self.scheme)));
        }
        if self.hr.direction == Direction::Ascend {
            return Err(Error::invalid("the HR phase always descends"));
        }
        if self.lr.direction == Direction::Ascend && self.scheme != Scheme::AdversarialLr {
            return Err(Error::invalid(format!("LR ascent requested under scheme {}", self.scheme)));
        }
        let (mut hr, mut lr) = (self.hr.clone(), self.lr.clone());
        match self.scheme {
            Scheme::Hierarchical => {}
            Scheme::LrOnly => hr.iters = 0,
            Scheme::HrOnly => lr.iters = 0,
            Scheme::Baseline => {
                hr.iters = 0;
                lr.iters = 0;
            }
            Scheme::AdversarialLr => {
                hr.iters = 0;
                lr.direction = Direction::Ascend;
            }
        }
        Ok((hr, lr))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Both perturbation phases plus every downscale, wall clock.
    pub downscale_phase_seconds: f64,
    /// The single final `f(x_out)` call.
    pub upscale_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HcdResult {
    pub scheme: Scheme,
    /// The downscaled representation that would be stored.
    #[serde(skip)]
    pub x_out: Tensor,
    /// `f(x_out)`.
    #[serde(skip)]
    pub y_recon: Tensor,
    pub hr_run: OptRun,
    pub lr_run: OptRun,
    pub metrics: Quality,
    pub timing: Timing,
}

impl HcdResult {
    /// Worst ball-constraint excess over both phases.
    pub fn radius_excess(&self) -> f64 {
        self.hr_run.radius_excess().max(self.lr_run.radius_excess())
    }

    /// Perturbation applied to the plain downscale `g(y)` to reach `x_out`,
    /// covering both phases.
    pub fn lr_delta(&self, chain: &ModelChain, y: &Tensor) -> Result<Tensor> {
        self.x_out.sub(&chain.downscale(y)?)
    }
}

/// Runs the configured scheme on one image `y` (batch of one, values in
/// `[0, 1]`, dims divisible by the chain scale).
pub fn hcd_rescale(chain: &ModelChain, y: &Tensor, cfg: &HcdConfig) -> Result<HcdResult> {
    if y.batch() != 1 {
        return Err(Error::invalid(format!("hcd_rescale takes one image, got a batch of {}", y.batch())));
    }
    let s = chain.scale();
    if y.height() % s != 0 || y.width() % s != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is not divisible by scale {s}",
            y.width(),
            y.height()
        )));
    }
    if y.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    let (hr_cfg, lr_cfg) = cfg.resolved()?;
    if cfg.rounds > 1 && !matches!(chain.down, Downscaler::Bicubic(_)) {
        return Err(Error::invalid("multi-round HCD needs a bicubic downscaler"));
    }

    let t0 = Instant::now();
    let mut hr_delta = initial_delta(&hr_cfg, y)?;
    let mut lr_delta: Option<Tensor> = None;
    let mut runs = None;
    for _ in 0..cfg.rounds {
        let hr_run = optimize_hr_from(chain, y, &hr_cfg, hr_delta, lr_delta.as_ref())?;
        let x = chain.downscale(&hr_run.final_input)?;
        let lr0 = match lr_delta.take() {
            Some(d) => d,
            None => initial_delta(&lr_cfg, &x)?,
        };
        let lr_run = optimize_lr_from(chain, &x, y, &lr_cfg, lr0)?;
        hr_delta = hr_run.final_delta.clone();
        lr_delta = Some(lr_run.final_delta.clone());
        runs = Some((hr_run, lr_run));
    }
    let (hr_run, lr_run) = runs.expect("rounds >= 1");
    let x_out = lr_run.final_input.clone();
    let downscale_phase_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let y_recon = chain.upscale(&x_out)?;
    let upscale_seconds = t1.elapsed().as_secs_f64();

    let metrics = quality_y(&y_recon, y, cfg.shave)?;
    Ok(HcdResult {
        scheme: cfg.scheme,
        x_out,
        y_recon,
        hr_run,
        lr_run,
        metrics,
        timing: Timing { downscale_phase_seconds, upscale_seconds },
    })
}
