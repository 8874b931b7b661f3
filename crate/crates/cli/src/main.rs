//! `hcd`: train a toy rescaling chain, run collaborative downscaling, sweep
//! its hyperparameters and score images.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod config;
mod error;
mod manifest;
mod runs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcd_core::collab::{Init, Norm, RadiusMode};
use hcd_core::diffpipe::LossKind;
use hcd_core::experiments::SweepKind;
use hcd_core::hcd::Scheme;
use hcd_core::trainer::Optimizer;

use crate::config::Settings;
use crate::error::{CliError, CliResult, Exit};
use crate::runs::RunConfig;

#[derive(Parser)]
#[command(name = "hcd", version, about = "Collaborative downscaling for image rescaling")]
struct Cli {
    /// Worker threads for corpus-level work [default: all cores]
    #[arg(long, global = true, env = "HCD_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the upscaler (and optionally a learned downscaler) from scratch
    Train(TrainArgs),
    /// Produce LR images with the selected scheme and score their reconstructions
    Hcd(HcdArgs),
    /// Sweep iterations, alpha, epsilon or schemes over a corpus
    Sweep(SweepArgs),
    /// Y-channel PSNR/SSIM of image pairs
    Eval(EvalArgs),
    /// Normalized |difference| map between two LR images
    VizDelta(VizArgs),
    /// Re-run a manifest and check its outputs byte for byte
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<Optimizer>,
    /// mse or l1-charbonnier
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Synthetic corpus size (the last 20% is held out)
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Train on crops of these images (files or directories) instead
    #[arg(long, value_delimiter = ',')]
    images: Vec<PathBuf>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// Upscaler layer spec, e.g. "conv5:3>32 relu conv3:32>12 shuffle2 +bicubic"
    #[arg(long)]
    architecture: Option<String>,
    /// bicubic or learned
    #[arg(long)]
    downscaler: Option<String>,
}

#[derive(Args)]
struct PerturbArgs {
    /// baseline, lr_only, hr_only, hierarchical or adversarial_lr
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Iterations per phase (N_x = N_y)
    #[arg(long, visible_alias = "N")]
    iters: Option<usize>,
    #[arg(long)]
    hr_iters: Option<usize>,
    #[arg(long)]
    lr_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// l2 or linf
    #[arg(long)]
    norm: Option<Norm>,
    /// per_element_scaled or absolute
    #[arg(long)]
    radius_mode: Option<RadiusMode>,
    /// zero, uniform_small or uniform_ball
    #[arg(long)]
    init: Option<Init>,
    /// mse or l1-charbonnier
    #[arg(long)]
    loss: Option<LossKind>,
    /// HR/LR alternations (hierarchical scheme only)
    #[arg(long)]
    rounds: Option<usize>,
    /// Border pixels ignored by the metrics
    #[arg(long)]
    shave: Option<usize>,
    /// HR phase seed; the LR phase uses seed + 1
    #[arg(long)]
    seed: Option<u64>,
}

impl PerturbArgs {
    fn apply(&self, s: &mut Settings) {
        s.flag("scheme", self.scheme);
        s.flag("iters", self.iters);
        s.flag("hr_iters", self.hr_iters);
        s.flag("lr_iters", self.lr_iters);
        s.flag("epsilon", self.epsilon);
        s.flag("alpha", self.alpha);
        s.flag("norm", self.norm);
        s.flag("radius_mode", self.radius_mode);
        s.flag("init", self.init);
        s.flag("loss", self.loss);
        s.flag("rounds", self.rounds);
        s.flag("shave", self.shave);
        s.flag("seed", self.seed);
    }
}

#[derive(Args)]
struct HcdArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Image files or directories
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    perturb: PerturbArgs,
    /// Write 16-bit PNGs instead of 8-bit
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// iterations, alpha, epsilon or schemes
    #[arg(long)]
    kind: Option<SweepKind>,
    /// Grid values [default: 1,5,10,15,20 or one decade around the current value]
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    /// Schemes to compare [default: all]
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<Scheme>,
    /// Use the held-out split of the synthetic training corpus
    #[arg(long)]
    synthetic_heldout: bool,
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Image files or directories
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    perturb: PerturbArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON report to write
    #[arg(long)]
    out: PathBuf,
    /// Reference and test image (repeatable)
    #[arg(long, num_args = 2, value_names = ["REF", "TEST"])]
    pair: Vec<PathBuf>,
    /// Pair every image here with the same file name in --test-dir
    #[arg(long)]
    ref_dir: Option<PathBuf>,
    #[arg(long)]
    test_dir: Option<PathBuf>,
    #[arg(long)]
    shave: Option<usize>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grayscale PNG to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    collaborative: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Splits `--out path/to/file.ext` into its directory and file name.
fn split_out(out: &Path) -> CliResult<(PathBuf, String)> {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::usage(format!("--out {} has no file name", out.display())))?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    Ok((dir, name))
}

fn resolve(command: Command) -> CliResult<Option<(RunConfig, PathBuf)>> {
    Ok(Some(match command {
        Command::Train(a) => {
            let mut s = Settings::from_file(a.config.as_deref())?;
            s.flag("scale", a.scale);
            s.flag("seed", a.seed);
            s.flag("epochs", a.epochs);
            s.flag("batch_size", a.batch_size);
            s.flag("learning_rate", a.learning_rate);
            s.flag("optimizer", a.optimizer);
            s.flag("loss", a.loss);
            s.flag("patch_size", a.patch_size);
            s.flag("corpus_size", a.corpus_size);
            s.flag("corpus_seed", a.corpus_seed);
            s.flag_list("images", &a.images.iter().map(|p| p.display()).collect::<Vec<_>>());
            s.flag("patches_per_image", a.patches_per_image);
            s.flag("architecture", a.architecture);
            s.flag("downscaler", a.downscaler);
            let (dir, name) = split_out(&a.out)?;
            (RunConfig::Train(runs::resolve_train(s, name)?), dir)
        }
        Command::Hcd(a) => {
            let mut s = Settings::from_file(a.config.as_deref())?;
            s.flag("model", a.model.as_ref().map(|p| p.display()));
            s.flag_list("inputs", &a.inputs.iter().map(|p| p.display()).collect::<Vec<_>>());
            a.perturb.apply(&mut s);
            s.flag_switch("sixteen_bit", a.sixteen_bit);
            (RunConfig::Hcd(runs::resolve_hcd(s)?), a.out_dir)
        }
        Command::Sweep(a) => {
            let mut s = Settings::from_file(a.config.as_deref())?;
            s.flag("model", a.model.as_ref().map(|p| p.display()));
            s.flag("kind", a.kind);
            s.flag_list("grid", &a.grid);
            s.flag_list("schemes", &a.schemes);
            s.flag_switch("synthetic_heldout", a.synthetic_heldout);
            s.flag("corpus_size", a.corpus_size);
            s.flag("corpus_seed", a.corpus_seed);
            s.flag("patch_size", a.patch_size);
            s.flag_list("inputs", &a.inputs.iter().map(|p| p.display()).collect::<Vec<_>>());
            a.perturb.apply(&mut s);
            (RunConfig::Sweep(runs::resolve_sweep(s)?), a.out_dir)
        }
        Command::Eval(a) => {
            let mut s = Settings::from_file(a.config.as_deref())?;
            let pairs: Vec<String> =
                a.pair.chunks(2).map(|p| format!("{}:{}", p[0].display(), p[1].display())).collect();
            s.flag_list("pairs", &pairs);
            s.flag("ref_dir", a.ref_dir.as_ref().map(|p| p.display()));
            s.flag("test_dir", a.test_dir.as_ref().map(|p| p.display()));
            s.flag("shave", a.shave);
            let (dir, name) = split_out(&a.out)?;
            (RunConfig::Eval(runs::resolve_eval(s, name)?), dir)
        }
        Command::VizDelta(a) => {
            let mut s = Settings::from_file(a.config.as_deref())?;
            s.flag("baseline", a.baseline.as_ref().map(|p| p.display()));
            s.flag("collaborative", a.collaborative.as_ref().map(|p| p.display()));
            let (dir, name) = split_out(&a.out)?;
            (RunConfig::VizDelta(runs::resolve_viz(s, name)?), dir)
        }
        Command::Replay(a) => {
            let m = manifest::load_manifest(&a.manifest)?;
            let fresh = manifest::replay(&m, &a.out_dir)?;
            println!("replayed {} outputs into {}: identical", fresh.outputs.len(), a.out_dir.display());
            return Ok(None);
        }
    }))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    let Some((config, dir)) = resolve(cli.command)? else { return Ok(()) };
    let (_, outputs) = manifest::execute(&config, &dir)?;
    match outputs.partial_failure {
        Some(msg) => Err(CliError::data(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Exit::Usage) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit.into()
        }
    }
}
