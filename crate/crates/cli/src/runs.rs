//! Resolved command configurations and their execution. A `RunConfig` holds
//! everything a run depends on except the output directory, which is what
//! makes manifests replayable elsewhere.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hcd_core::collab::{Init, Norm, OptRun, RadiusMode};
use hcd_core::diffpipe::{load_model, save_model, Downscaler, LearnedDownscaler, LossKind, ModelChain, Upscaler};
use hcd_core::experiments::{
    best_index, compare_schemes, rows_to_csv, summarize, sweep, timing_to_csv, log_grid, run_corpus, Stat, SweepKind,
    SweepRow,
};
use hcd_core::hcd::{HcdConfig, Scheme};
use hcd_core::imaging::{load_image, quality_y, save_image, save_image_with_depth, BitDepth, ColorSpace, Image};
use hcd_core::trainer::{self, make_synthetic_corpus, CorpusSource, Optimizer, TrainConfig};
use hcd_core::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::Settings;
use crate::error::{CliError, CliResult, ResultExt};

pub const RECORD_SCHEMA: &str = "hcd-record/1";
pub const EVAL_SCHEMA: &str = "hcd-eval/1";
pub const PLOT_SCHEMA: &str = "hcd-plot/1";
pub const VIZ_SCHEMA: &str = "hcd-viz/1";
pub const TRAIN_REPORT_SCHEMA: &str = "hcd-train-report/1";
pub const TIMING_SCHEMA: &str = "hcd-timing/1";

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Train(TrainRun),
    Hcd(HcdRun),
    Sweep(SweepRun),
    Eval(EvalRun),
    VizDelta(VizRun),
}

/// Files a run wrote, relative to its output directory.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
    pub timing: Vec<PathBuf>,
    /// Set when the run finished but some items failed (eval pairs).
    pub partial_failure: Option<String>,
}

impl Outputs {
    fn write(&mut self, dir: &Path, name: impl Into<PathBuf>, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let name = name.into();
        std::fs::write(dir.join(&name), contents).ctx(name.display())?;
        self.files.push(name);
        Ok(())
    }

    fn write_json(&mut self, dir: &Path, name: impl Into<PathBuf>, value: &impl Serialize) -> CliResult<()> {
        self.write(dir, name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn write_timing(&mut self, dir: &Path, name: impl Into<PathBuf>, value: &impl Serialize) -> CliResult<()> {
        let name = name.into();
        std::fs::write(dir.join(&name), serde_json::to_string_pretty(value)? + "\n").ctx(name.display())?;
        self.timing.push(name);
        Ok(())
    }

    fn image(&mut self, dir: &Path, name: String, img: &Image, depth: BitDepth) -> CliResult<()> {
        save_image_with_depth(img, dir.join(&name), depth).ctx(&name)?;
        self.files.push(name.into());
        Ok(())
    }
}

impl RunConfig {
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            RunConfig::Train(t) => match &t.train.corpus {
                CorpusSource::Images { paths, .. } => paths.clone(),
                CorpusSource::Synthetic { .. } => vec![],
            },
            RunConfig::Hcd(h) => std::iter::once(h.model.clone()).chain(h.inputs.iter().cloned()).collect(),
            RunConfig::Sweep(s) => {
                let mut v = vec![s.model.clone()];
                if let SweepCorpus::Files { paths } = &s.corpus {
                    v.extend(paths.iter().cloned());
                }
                v
            }
            RunConfig::Eval(e) => e.pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect(),
            RunConfig::VizDelta(v) => vec![v.baseline.clone(), v.collaborative.clone()],
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Train(t) => Some(t.train.seed),
            RunConfig::Hcd(h) => Some(h.config.hr.seed),
            RunConfig::Sweep(s) => Some(s.config.hr.seed),
            RunConfig::Eval(_) | RunConfig::VizDelta(_) => None,
        }
    }

    pub fn manifest_name(&self) -> String {
        match self {
            RunConfig::Train(TrainRun { output, .. })
            | RunConfig::Eval(EvalRun { output, .. })
            | RunConfig::VizDelta(VizRun { output, .. }) => format!("{}.manifest.json", stem(output)),
            RunConfig::Hcd(_) | RunConfig::Sweep(_) => "manifest.json".into(),
        }
    }

    pub fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        match self {
            RunConfig::Train(t) => t.execute(dir),
            RunConfig::Hcd(h) => h.execute(dir),
            RunConfig::Sweep(s) => s.execute(dir),
            RunConfig::Eval(e) => e.execute(dir),
            RunConfig::VizDelta(v) => v.execute(dir),
        }
    }
}

fn stem(name: &str) -> String {
    Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| name.to_string())
}

/// Canonical absolute path of an existing file, so manifests replay from
/// any working directory.
fn existing(path: &Path) -> CliResult<PathBuf> {
    path.canonicalize().map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Files and directories (non-recursive, sorted) expanded to image files.
pub fn expand_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        let p = existing(p)?;
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&p)
                .ctx(p.display())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

/// Loads an image as a batch-of-one RGB tensor cropped to a multiple of
/// `scale`, warning on stderr when pixels were dropped.
pub fn load_for_scale(path: &Path, scale: usize) -> CliResult<(Tensor, Option<[usize; 2]>)> {
    let img = load_image(path).ctx(path.display())?.to_rgb().ctx(path.display())?;
    let cropped = img.crop_to_multiple(scale).ctx(path.display())?;
    let original = if cropped.width() != img.width() || cropped.height() != img.height() {
        eprintln!(
            "warning: {}: cropped {}x{} to {}x{} (multiple of scale {scale})",
            path.display(),
            img.width(),
            img.height(),
            cropped.width(),
            cropped.height()
        );
        Some([img.height(), img.width()])
    } else {
        None
    };
    Ok((cropped.to_tensor(), original))
}

fn load_chain(path: &Path) -> CliResult<ModelChain> {
    load_model(path).ctx(format!("model {}", path.display()))
}

// ---------------------------------------------------------------- train

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownscalerKind {
    Bicubic,
    Learned,
}

impl std::str::FromStr for DownscalerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bicubic" => Ok(DownscalerKind::Bicubic),
            "learned" => Ok(DownscalerKind::Learned),
            _ => Err(format!("expected bicubic or learned, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRun {
    pub scale: usize,
    pub architecture: String,
    pub downscaler: DownscalerKind,
    pub train: TrainConfig,
    /// Model file name inside the output directory.
    pub output: String,
}

pub fn resolve_train(mut s: Settings, output: String) -> CliResult<TrainRun> {
    let scale: usize = s.require("scale")?;
    if scale < 2 {
        return Err(CliError::usage(format!("scale must be at least 2, got {scale}")));
    }
    let d = TrainConfig::default();
    let (default_n, default_corpus_seed) = match d.corpus {
        CorpusSource::Synthetic { n, seed } => (n, seed),
        CorpusSource::Images { .. } => unreachable!("default corpus is synthetic"),
    };
    let images = s.paths("images")?;
    let corpus_seed = s.get_or("corpus_seed", default_corpus_seed)?;
    let corpus = if images.is_empty() {
        CorpusSource::Synthetic { n: s.get_or("corpus_size", default_n)?, seed: corpus_seed }
    } else {
        CorpusSource::Images { paths: expand_inputs(&images)?, per_image: s.get_or("patches_per_image", 16)?, seed: corpus_seed }
    };
    let train = TrainConfig {
        epochs: s.get_or("epochs", d.epochs)?,
        batch_size: s.get_or("batch_size", d.batch_size)?,
        learning_rate: s.get_or("learning_rate", d.learning_rate)?,
        optimizer: s.get_or::<Optimizer>("optimizer", d.optimizer)?,
        loss: s.get_or::<LossKind>("loss", d.loss)?,
        seed: s.get_or("seed", d.seed)?,
        patch_size: s.get_or("patch_size", d.patch_size)?,
        corpus,
    };
    let architecture = s.get_or("architecture", Upscaler::default_architecture(3, scale))?;
    let downscaler = s.get_or("downscaler", DownscalerKind::Bicubic)?;
    s.finish()?;
    train.validate(scale).usage()?;
    if let CorpusSource::Synthetic { n, .. } = train.corpus {
        if n < 2 {
            return Err(CliError::usage("corpus size must be at least 2 (one patch is held out)"));
        }
    }
    let up = Upscaler::from_architecture(&architecture).usage()?;
    if up.scale() != scale || up.image_channels() != 3 {
        return Err(CliError::usage(format!("architecture does not map RGB at scale {scale}: {architecture}")));
    }
    Ok(TrainRun { scale, architecture, downscaler, train, output })
}

impl TrainRun {
    fn initial_chain(&self) -> CliResult<ModelChain> {
        let down = match self.downscaler {
            DownscalerKind::Bicubic => Downscaler::Bicubic(hcd_core::diffpipe::BicubicOp::new(self.scale)?),
            DownscalerKind::Learned => {
                let mut d = LearnedDownscaler::from_architecture(&LearnedDownscaler::default_architecture(3, self.scale))?;
                d.init_smooth();
                Downscaler::Learned(d)
            }
        };
        Ok(trainer::init_chain(&self.architecture, down, self.train.seed)?)
    }

    fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        let t0 = Instant::now();
        let corpus = self.train.corpus.build(self.train.patch_size)?;
        let chain = self.initial_chain()?;
        let every = (self.train.epochs / 10).max(1);
        let (trained, report) = trainer::train(&chain, &corpus, &self.train, |epoch, loss| {
            if epoch % every == 0 || epoch + 1 == self.train.epochs {
                eprintln!("epoch {epoch:>4}  loss {loss:.6e}");
            }
        })?;
        let seconds = t0.elapsed().as_secs_f64();
        let stem = stem(&self.output);
        let mut out = Outputs::default();
        save_model(&trained, dir.join(&self.output)).ctx(&self.output)?;
        out.files.push(self.output.clone().into());
        let loss_csv = format!("{stem}.loss.csv");
        trainer::write_loss_csv(&report.loss_curve, dir.join(&loss_csv))?;
        out.files.push(loss_csv.into());
        out.write_json(
            dir,
            format!("{stem}.report.json"),
            &json!({
                "schema": TRAIN_REPORT_SCHEMA,
                "train_patches": corpus.train_split().len(),
                "heldout_patches": report.heldout_count,
                "final_loss": report.loss_curve.last(),
                "heldout": report.heldout,
                "gain_db": report.gain_db(),
                "gate_db": trainer::GATE_DB,
                "passes_gate": report.passes_gate(),
            }),
        )?;
        out.write_timing(dir, format!("{stem}.timing.json"), &json!({ "schema": TIMING_SCHEMA, "train_seconds": seconds }))?;
        println!(
            "held-out PSNR {:.3} dB vs bicubic {:.3} dB (gain {:+.3} dB, gate {} dB: {}) in {seconds:.1} s",
            report.heldout.model_psnr,
            report.heldout.bicubic_psnr,
            report.gain_db(),
            trainer::GATE_DB,
            if report.passes_gate() { "pass" } else { "FAIL" }
        );
        Ok(out)
    }
}

// ---------------------------------------------------------------- hcd knobs

/// Perturbation settings shared by `hcd` and `sweep`, applied to both phases.
pub fn resolve_hcd_config(s: &mut Settings) -> CliResult<HcdConfig> {
    let mut cfg = HcdConfig::default();
    let seed: u64 = s.get_or("seed", cfg.hr.seed)?;
    cfg.scheme = s.get_or("scheme", cfg.scheme)?;
    let iters: Option<usize> = s.get("iters")?;
    let eps: Option<f64> = s.get("epsilon")?;
    let alpha: Option<f64> = s.get("alpha")?;
    let norm: Option<Norm> = s.get("norm")?;
    let mode: Option<RadiusMode> = s.get("radius_mode")?;
    let init: Option<Init> = s.get("init")?;
    let loss: Option<LossKind> = s.get("loss")?;
    for (i, p) in [&mut cfg.hr, &mut cfg.lr].into_iter().enumerate() {
        p.seed = seed + i as u64;
        p.iters = iters.unwrap_or(p.iters);
        p.epsilon = eps.unwrap_or(p.epsilon);
        p.alpha = alpha.unwrap_or(p.alpha);
        p.norm = norm.unwrap_or(p.norm);
        p.radius_mode = mode.unwrap_or(p.radius_mode);
        p.init = init.unwrap_or(p.init);
        p.loss = loss.unwrap_or(p.loss);
    }
    if let Some(n) = s.get("hr_iters")? {
        cfg.hr.iters = n;
    }
    if let Some(n) = s.get("lr_iters")? {
        cfg.lr.iters = n;
    }
    cfg.rounds = s.get_or("rounds", cfg.rounds)?;
    cfg.shave = s.get_or("shave", cfg.shave)?;
    cfg.resolved().usage()?;
    Ok(cfg)
}

// ---------------------------------------------------------------- hcd

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HcdRun {
    pub model: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub config: HcdConfig,
    pub sixteen_bit: bool,
}

pub fn resolve_hcd(mut s: Settings) -> CliResult<HcdRun> {
    let model = existing(&s.require::<PathBuf>("model")?)?;
    let inputs = expand_inputs(&s.paths("inputs")?)?;
    let config = resolve_hcd_config(&mut s)?;
    let sixteen_bit = s.switch("sixteen_bit")?;
    s.finish()?;
    if inputs.is_empty() {
        return Err(CliError::usage("no input images"));
    }
    let mut stems = BTreeSet::new();
    for p in &inputs {
        if !stems.insert(image_stem(p)) {
            return Err(CliError::usage(format!("two inputs share the file name stem of {}", p.display())));
        }
    }
    Ok(HcdRun { model, inputs, config, sixteen_bit })
}

fn image_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize)]
struct HcdRecord<'a> {
    schema: &'static str,
    input: &'a Path,
    /// `[height, width]` before cropping to a scale multiple, when cropped.
    cropped_from: Option<[usize; 2]>,
    hr_size: [usize; 2],
    lr_size: [usize; 2],
    lr_image: String,
    recon_image: String,
    scheme: Scheme,
    psnr_y: f64,
    ssim_y: f64,
    hr_run: &'a OptRun,
    lr_run: &'a OptRun,
}

impl HcdRun {
    fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        let chain = load_chain(&self.model)?;
        let mut images = Vec::with_capacity(self.inputs.len());
        let mut crops = Vec::with_capacity(self.inputs.len());
        for p in &self.inputs {
            let (t, c) = load_for_scale(p, chain.scale())?;
            images.push(t);
            crops.push(c);
        }
        let results = run_corpus(&chain, &images, &self.config)?;
        let depth = if self.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
        let mut out = Outputs::default();
        let mut per_image = Vec::new();
        let mut timing = Vec::new();
        for ((path, r), crop) in self.inputs.iter().zip(&results).zip(crops) {
            let stem = image_stem(path);
            let lr_image = format!("{stem}_lr.png");
            let recon_image = format!("{stem}_recon.png");
            out.image(dir, lr_image.clone(), &Image::from_tensor_clamped(&r.x_out, ColorSpace::Rgb)?, depth)?;
            out.image(dir, recon_image.clone(), &Image::from_tensor_clamped(&r.y_recon, ColorSpace::Rgb)?, depth)?;
            let record = HcdRecord {
                schema: RECORD_SCHEMA,
                input: path,
                cropped_from: crop,
                hr_size: [r.y_recon.height(), r.y_recon.width()],
                lr_size: [r.x_out.height(), r.x_out.width()],
                lr_image,
                recon_image,
                scheme: r.scheme,
                psnr_y: r.metrics.psnr_y,
                ssim_y: r.metrics.ssim_y,
                hr_run: &r.hr_run,
                lr_run: &r.lr_run,
            };
            out.write_json(dir, format!("{stem}.json"), &record)?;
            out.write_timing(dir, format!("{stem}.timing.json"), &json!({ "schema": TIMING_SCHEMA, "timing": r.timing }))?;
            per_image.push(json!({ "input": path, "psnr_y": r.metrics.psnr_y, "ssim_y": r.metrics.ssim_y }));
            timing.push(r.timing);
            println!("{}  psnr_y {:.4} dB  ssim_y {:.5}", path.display(), r.metrics.psnr_y, r.metrics.ssim_y);
        }
        let row = summarize(SweepKind::Schemes, None, &results);
        out.write_json(
            dir,
            "summary.json",
            &json!({
                "schema": RECORD_SCHEMA,
                "scheme": self.config.scheme,
                "images": results.len(),
                "psnr_y": row.psnr_y,
                "ssim_y": row.ssim_y,
                "radius_excess": row.radius_excess,
                "per_image": per_image,
            }),
        )?;
        out.write_timing(
            dir,
            "timing.json",
            &json!({
                "schema": TIMING_SCHEMA,
                "downscale_phase_seconds": row.downscale_seconds,
                "upscale_seconds": row.upscale_seconds,
            }),
        )?;
        Ok(out)
    }
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepCorpus {
    Files { paths: Vec<PathBuf> },
    /// Held-out split of the seeded synthetic training corpus.
    SyntheticHeldout { n: usize, seed: u64, patch_size: usize },
}

impl SweepCorpus {
    fn load(&self, scale: usize) -> CliResult<Vec<Tensor>> {
        match self {
            SweepCorpus::Files { paths } => paths.iter().map(|p| load_for_scale(p, scale).map(|t| t.0)).collect(),
            SweepCorpus::SyntheticHeldout { n, seed, patch_size } => {
                Ok(make_synthetic_corpus(*seed, *n, *patch_size)?.heldout().to_vec())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRun {
    pub model: PathBuf,
    pub corpus: SweepCorpus,
    pub kind: SweepKind,
    /// Numeric grid; empty for scheme comparisons.
    pub grid: Vec<f64>,
    /// Schemes compared; empty for numeric sweeps.
    pub schemes: Vec<Scheme>,
    pub config: HcdConfig,
}

/// Five log-spaced points spanning one decade centred on `v`.
pub fn decade_around(v: f64) -> Vec<f64> {
    let r = 10f64.sqrt();
    log_grid(v / r, v * r, 5)
}

pub fn resolve_sweep(mut s: Settings) -> CliResult<SweepRun> {
    let model = existing(&s.require::<PathBuf>("model")?)?;
    let kind: SweepKind = s.require("kind")?;
    let grid: Option<Vec<f64>> = s.list("grid")?;
    let schemes: Option<Vec<Scheme>> = s.list("schemes")?;
    let inputs = s.paths("inputs")?;
    let synthetic = s.switch("synthetic_heldout")?;
    let d = TrainConfig::default();
    let (dn, dseed) = match d.corpus {
        CorpusSource::Synthetic { n, seed } => (n, seed),
        CorpusSource::Images { .. } => unreachable!("default corpus is synthetic"),
    };
    let n = s.get_or("corpus_size", dn)?;
    let seed = s.get_or("corpus_seed", dseed)?;
    let patch_size = s.get_or("patch_size", d.patch_size)?;
    let config = resolve_hcd_config(&mut s)?;
    s.finish()?;
    let corpus = match (synthetic, inputs.is_empty()) {
        (true, true) => SweepCorpus::SyntheticHeldout { n, seed, patch_size },
        (false, false) => SweepCorpus::Files { paths: expand_inputs(&inputs)? },
        (true, false) => return Err(CliError::usage("give either input images or --synthetic-heldout, not both")),
        (false, true) => return Err(CliError::usage("no corpus: give input images or --synthetic-heldout")),
    };
    let (grid, schemes) = match kind {
        SweepKind::Schemes => {
            if grid.is_some() {
                return Err(CliError::usage("scheme sweeps take --schemes, not --grid"));
            }
            (vec![], schemes.unwrap_or_else(|| Scheme::ALL.to_vec()))
        }
        _ => {
            if schemes.is_some() {
                return Err(CliError::usage("--schemes only applies to --kind schemes"));
            }
            let grid = grid.unwrap_or_else(|| match kind {
                SweepKind::Iterations => vec![1.0, 5.0, 10.0, 15.0, 20.0],
                SweepKind::Alpha => decade_around(config.lr.alpha),
                SweepKind::Epsilon => decade_around(config.lr.epsilon),
                SweepKind::Schemes => unreachable!(),
            });
            (grid, vec![])
        }
    };
    if grid.is_empty() && schemes.is_empty() {
        return Err(CliError::usage("empty sweep grid"));
    }
    for &v in &grid {
        hcd_core::experiments::grid_config(&config, kind, v).usage()?;
    }
    Ok(SweepRun { model, corpus, kind, grid, schemes, config })
}

impl SweepRun {
    pub fn rows(&self) -> CliResult<Vec<SweepRow>> {
        let chain = load_chain(&self.model)?;
        let images = self.corpus.load(chain.scale())?;
        Ok(match self.kind {
            SweepKind::Schemes => compare_schemes(&chain, &images, &self.config, &self.schemes)?,
            kind => sweep(&chain, &images, &self.config, kind, &self.grid)?,
        })
    }

    fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        let rows = self.rows()?;
        let mut out = Outputs::default();
        out.write(dir, "sweep.csv", rows_to_csv(&rows))?;
        std::fs::write(dir.join("sweep.timing.csv"), timing_to_csv(&rows))?;
        out.timing.push("sweep.timing.csv".into());
        let x: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| match r.value {
                Some(v) => json!(v),
                None => json!(r.scheme),
            })
            .collect();
        let series = |f: fn(&SweepRow) -> Stat| {
            json!({
                "mean": rows.iter().map(|r| f(r).mean).collect::<Vec<_>>(),
                "std": rows.iter().map(|r| f(r).std).collect::<Vec<_>>(),
            })
        };
        out.write_json(
            dir,
            "sweep.plot.json",
            &json!({
                "schema": PLOT_SCHEMA,
                "sweep": self.kind,
                "x": x,
                "images": rows.first().map(|r| r.images),
                "psnr_y": series(|r| r.psnr_y),
                "ssim_y": series(|r| r.ssim_y),
                "best_index": best_index(&rows),
            }),
        )?;
        for r in &rows {
            let label = r.value.map(|v| format!("{v}")).unwrap_or_else(|| r.scheme.to_string());
            println!(
                "{:>10} {:<16} psnr_y {:.4} ± {:.4}  ssim_y {:.5}  up {:.2} ms",
                self.kind.to_string(),
                label,
                r.psnr_y.mean,
                r.psnr_y.std,
                r.ssim_y.mean,
                1e3 * r.upscale_seconds.median
            );
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRun {
    /// `(reference, test)` pairs.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub shave: usize,
    pub output: String,
}

/// Absolute path when the file exists; eval keeps missing files so the
/// failure is reported per pair rather than aborting the batch.
fn absolute_lenient(p: &Path) -> PathBuf {
    p.canonicalize().unwrap_or_else(|_| std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf()))
}

pub fn resolve_eval(mut s: Settings, output: String) -> CliResult<EvalRun> {
    let mut pairs = Vec::new();
    for item in s.list::<String>("pairs")?.unwrap_or_default() {
        let Some((a, b)) = item.split_once(':') else {
            return Err(CliError::usage(format!("pair {item:?} is not REF:TEST")));
        };
        pairs.push((absolute_lenient(Path::new(a)), absolute_lenient(Path::new(b))));
    }
    let ref_dir: Option<PathBuf> = s.get("ref_dir")?;
    let test_dir: Option<PathBuf> = s.get("test_dir")?;
    match (ref_dir, test_dir) {
        (Some(r), Some(t)) => {
            for rf in expand_inputs(&[r])? {
                let name = rf.file_name().expect("listed files have names").to_owned();
                pairs.push((rf, absolute_lenient(&t.join(name))));
            }
        }
        (None, None) => {}
        _ => return Err(CliError::usage("--ref-dir and --test-dir go together")),
    }
    let shave = s.get_or("shave", 0)?;
    s.finish()?;
    if pairs.is_empty() {
        return Err(CliError::usage("no image pairs to evaluate"));
    }
    Ok(EvalRun { pairs, shave, output })
}

fn eval_pair(reference: &Path, test: &Path, shave: usize) -> CliResult<hcd_core::imaging::Quality> {
    let a = load_image(reference).ctx(reference.display())?;
    let b = load_image(test).ctx(test.display())?;
    if a.colorspace() != b.colorspace() || a.width() != b.width() || a.height() != b.height() {
        return Err(CliError::data(format!(
            "dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(quality_y(&b.to_tensor(), &a.to_tensor(), shave)?)
}

impl EvalRun {
    fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        let mut records = Vec::new();
        let (mut psnr, mut ssim, mut failed) = (Vec::new(), Vec::new(), 0);
        for (r, t) in &self.pairs {
            match eval_pair(r, t, self.shave) {
                Ok(q) => {
                    psnr.push(q.psnr_y);
                    ssim.push(q.ssim_y);
                    println!("{} vs {}  psnr_y {:.4} dB  ssim_y {:.5}", r.display(), t.display(), q.psnr_y, q.ssim_y);
                    records.push(json!({ "reference": r, "test": t, "psnr_y": q.psnr_y, "ssim_y": q.ssim_y }));
                }
                Err(e) => {
                    failed += 1;
                    eprintln!("error: {} vs {}: {e}", r.display(), t.display());
                    records.push(json!({ "reference": r, "test": t, "error": e.message }));
                }
            }
        }
        let (p, s) = (Stat::of(psnr.iter().copied()), Stat::of(ssim.iter().copied()));
        let mut out = Outputs::default();
        out.write_json(
            dir,
            &self.output,
            &json!({
                "schema": EVAL_SCHEMA,
                "shave": self.shave,
                "pairs": records,
                "aggregate": {
                    "evaluated": psnr.len(),
                    "failed": failed,
                    "psnr_y_mean": if psnr.is_empty() { None } else { Some(p.mean) },
                    "ssim_y_mean": if ssim.is_empty() { None } else { Some(s.mean) },
                },
            }),
        )?;
        if failed > 0 {
            out.partial_failure = Some(format!("{failed} of {} pairs could not be evaluated", self.pairs.len()));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- viz-delta

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VizRun {
    pub baseline: PathBuf,
    pub collaborative: PathBuf,
    pub output: String,
}

pub fn resolve_viz(mut s: Settings, output: String) -> CliResult<VizRun> {
    let baseline = existing(&s.require::<PathBuf>("baseline")?)?;
    let collaborative = existing(&s.require::<PathBuf>("collaborative")?)?;
    s.finish()?;
    if !output.to_ascii_lowercase().ends_with(".png") {
        return Err(CliError::usage("viz-delta writes PNG; --out must end in .png"));
    }
    Ok(VizRun { baseline, collaborative, output })
}

/// Channel-mean `|a - b|` per pixel divided by its maximum (all zeros when
/// the inputs are identical). Returns the map and the maximum.
pub fn delta_map(a: &Image, b: &Image) -> CliResult<(Image, f64)> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(CliError::data(format!(
            "dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let n = a.width() * a.height();
    let c = a.channels();
    let raw: Vec<f64> = (0..n)
        .map(|i| (0..c).map(|k| (a.pixels()[k * n + i] - b.pixels()[k * n + i]).abs()).sum::<f64>() / c as f64)
        .collect();
    let max = raw.iter().fold(0.0f64, |m, &v| m.max(v));
    let norm = if max > 0.0 { raw.iter().map(|v| v / max).collect() } else { raw };
    Ok((Image::new(a.width(), a.height(), ColorSpace::Gray, norm)?, max))
}

impl VizRun {
    fn execute(&self, dir: &Path) -> CliResult<Outputs> {
        let a = load_image(&self.baseline).ctx(self.baseline.display())?;
        let b = load_image(&self.collaborative).ctx(self.collaborative.display())?;
        let (map, max) = delta_map(&a, &b)?;
        let mut out = Outputs::default();
        save_image(&map, dir.join(&self.output)).ctx(&self.output)?;
        out.files.push(self.output.clone().into());
        let mean = map.pixels().iter().sum::<f64>() / map.pixels().len() as f64 * max;
        out.write_json(
            dir,
            format!("{}.json", stem(&self.output)),
            &json!({
                "schema": VIZ_SCHEMA,
                "baseline": self.baseline,
                "collaborative": self.collaborative,
                "width": a.width(),
                "height": a.height(),
                "reduction": "channel_mean_abs",
                "normalization": "per_image_max",
                "max_abs_delta": max,
                "mean_abs_delta": mean,
            }),
        )?;
        println!("max |delta| {max:.6} ({:.2} levels of 255)", max * 255.0);
        Ok(out)
    }
}
