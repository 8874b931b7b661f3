//! Corpus-level drivers: scheme comparisons and one-parameter sweeps over
//! iteration count, step size and budget, summarized as mean and standard
//! deviation per grid point.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffpipe::ModelChain;
use crate::error::{Error, Result};
use crate::hcd::{hcd_rescale, HcdConfig, HcdResult, Scheme};
use crate::tensor::Tensor;

/// Leading column of every sweep CSV; bump when columns change.
pub const SWEEP_SCHEMA: &str = "hcd-sweep/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN, median: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) };
        Stat { mean, std, median }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Iterations,
    Alpha,
    Epsilon,
    Schemes,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Iterations => "iterations",
            SweepKind::Alpha => "alpha",
            SweepKind::Epsilon => "epsilon",
            SweepKind::Schemes => "schemes",
        })
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" | "iters" => Ok(SweepKind::Iterations),
            "alpha" => Ok(SweepKind::Alpha),
            "epsilon" | "eps" => Ok(SweepKind::Epsilon),
            "schemes" => Ok(SweepKind::Schemes),
            _ => Err(Error::invalid(format!("unknown sweep kind {s:?}"))),
        }
    }
}

/// One grid point summarized over the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    /// Grid value; `None` for scheme comparisons.
    pub value: Option<f64>,
    pub scheme: Scheme,
    pub images: usize,
    pub psnr_y: Stat,
    pub ssim_y: Stat,
    pub downscale_seconds: Stat,
    pub upscale_seconds: Stat,
    /// Worst `‖delta‖ - radius` over every run in the row (never positive
    /// beyond rounding).
    pub radius_excess: f64,
}

/// Runs `cfg` on every image. Images are processed in parallel on the
/// current rayon pool; results come back in input order.
pub fn run_corpus(chain: &ModelChain, images: &[Tensor], cfg: &HcdConfig) -> Result<Vec<HcdResult>> {
    if images.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    images.par_iter().map(|y| hcd_rescale(chain, y, cfg)).collect()
}

pub fn summarize(kind: SweepKind, value: Option<f64>, results: &[HcdResult]) -> SweepRow {
    SweepRow {
        kind,
        value,
        scheme: results.first().map(|r| r.scheme).unwrap_or_default(),
        images: results.len(),
        psnr_y: Stat::of(results.iter().map(|r| r.metrics.psnr_y)),
        ssim_y: Stat::of(results.iter().map(|r| r.metrics.ssim_y)),
        downscale_seconds: Stat::of(results.iter().map(|r| r.timing.downscale_phase_seconds)),
        upscale_seconds: Stat::of(results.iter().map(|r| r.timing.upscale_seconds)),
        radius_excess: results.iter().map(HcdResult::radius_excess).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Each scheme in `schemes` under otherwise identical settings and seeds.
pub fn compare_schemes(chain: &ModelChain, images: &[Tensor], base: &HcdConfig, schemes: &[Scheme]) -> Result<Vec<SweepRow>> {
    if schemes.is_empty() {
        return Err(Error::invalid("no schemes to compare"));
    }
    schemes
        .iter()
        .map(|&s| Ok(summarize(SweepKind::Schemes, None, &run_corpus(chain, images, &base.clone().with_scheme(s))?)))
        .collect()
}

/// Baseline, LR-only, HR-only and hierarchical rows.
pub fn ablation_schemes(chain: &ModelChain, images: &[Tensor], base: &HcdConfig) -> Result<Vec<SweepRow>> {
    compare_schemes(chain, images, base, &Scheme::ABLATION)
}

/// `base` with the swept parameter set to `value`. Iteration counts apply to
/// both phases.
pub fn grid_config(base: &HcdConfig, kind: SweepKind, value: f64) -> Result<HcdConfig> {
    let mut cfg = base.clone();
    match kind {
        SweepKind::Iterations => {
            if !(value >= 0.0 && value.fract() == 0.0) {
                return Err(Error::invalid(format!("iteration count must be a non-negative integer, got {value}")));
            }
            cfg = cfg.with_iters(value as usize);
        }
        SweepKind::Alpha => {
            cfg.hr.alpha = value;
            cfg.lr.alpha = value;
        }
        SweepKind::Epsilon => {
            cfg.hr.epsilon = value;
            cfg.lr.epsilon = value;
        }
        SweepKind::Schemes => return Err(Error::invalid("scheme sweeps have no numeric grid")),
    }
    cfg.resolved()?;
    Ok(cfg)
}

/// One row per grid value, run with `base.scheme` (hierarchical by default).
pub fn sweep(chain: &ModelChain, images: &[Tensor], base: &HcdConfig, kind: SweepKind, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    let cfgs = grid.iter().map(|&v| grid_config(base, kind, v)).collect::<Result<Vec<_>>>()?;
    grid.iter()
        .zip(&cfgs)
        .map(|(&v, cfg)| Ok(summarize(kind, Some(v), &run_corpus(chain, images, cfg)?)))
        .collect()
}

pub fn iteration_sweep(chain: &ModelChain, images: &[Tensor], base: &HcdConfig, n_list: &[usize]) -> Result<Vec<SweepRow>> {
    let grid: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    sweep(chain, images, &base.clone().with_scheme(Scheme::Hierarchical), SweepKind::Iterations, &grid)
}

pub fn alpha_sweep(chain: &ModelChain, images: &[Tensor], base: &HcdConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    sweep(chain, images, base, SweepKind::Alpha, alphas)
}

pub fn epsilon_sweep(chain: &ModelChain, images: &[Tensor], base: &HcdConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    sweep(chain, images, base, SweepKind::Epsilon, epsilons)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
    }
}

/// Quality columns only. Everything here is a deterministic function of
/// the inputs and configuration, so reruns produce identical bytes;
/// wall-clock columns live in [`timing_to_csv`].
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("schema,sweep,value,scheme,images,psnr_mean,psnr_std,ssim_mean,ssim_std,radius_excess\n");
    for r in rows {
        out.push_str(&format!(
            "{SWEEP_SCHEMA},{},{},{},{},{},{},{},{},{:e}\n",
            r.kind,
            csv_value(r),
            r.scheme,
            r.images,
            r.psnr_y.mean,
            r.psnr_y.std,
            r.ssim_y.mean,
            r.ssim_y.std,
            r.radius_excess
        ));
    }
    out
}

/// Latency columns keyed like [`rows_to_csv`].
pub fn timing_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("schema,sweep,value,scheme,images,down_s_mean,down_s_std,up_s_mean,up_s_std,up_s_median\n");
    for r in rows {
        let (d, u) = (r.downscale_seconds, r.upscale_seconds);
        out.push_str(&format!(
            "{SWEEP_SCHEMA},{},{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
            r.kind,
            csv_value(r),
            r.scheme,
            r.images,
            d.mean,
            d.std,
            u.mean,
            u.std,
            u.median
        ));
    }
    out
}

fn csv_value(r: &SweepRow) -> String {
    r.value.map(|v| v.to_string()).unwrap_or_default()
}

/// Index of the grid point with the highest mean PSNR (first on ties).
pub fn best_index(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if best.map_or(true, |b| r.psnr_y.mean > rows[b].psnr_y.mean) {
            best = Some(i);
        }
    }
    best
}
