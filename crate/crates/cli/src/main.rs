use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Bad input that the user has to fix on the command line or in a config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// SIMP datasets and conditional GAN training for topology images.
///
/// Any flag may also come from a `--config FILE` of `key=value` lines;
/// flags given on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "topogan", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one SIMP optimization and write the density as a PGM.
    Gen(GenArgs),
    /// Run SIMP over a grid of settings and write a dataset.
    Sweep(SweepArgs),
    /// Write a synthetic class-conditioned band dataset.
    Synth(SynthArgs),
    /// Append a sparse-noise copy of every sample.
    Augment(AugmentArgs),
    /// Train (or resume) a conditional GAN.
    Train(TrainArgs),
    /// Draw samples at one condition into a PGM montage.
    Sample(SampleArgs),
    /// Measure volume-fraction fidelity of a checkpoint; prints JSON.
    Eval(EvalArgs),
    /// Compare network gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Convert IDX image and label files into a dataset.
    IdxImport(IdxImportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 60)]
    pub nelx: usize,
    #[arg(long, default_value_t = 20)]
    pub nely: usize,
    #[arg(long, default_value_t = 0.5)]
    pub volfrac: f64,
    #[arg(long, default_value_t = 3.0)]
    pub penal: f64,
    #[arg(long, default_value_t = 1.5)]
    pub rmin: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; SIMP is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 60)]
    pub nelx: usize,
    #[arg(long, default_value_t = 20)]
    pub nely: usize,
    /// Comma-separated volume fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7,0.8")]
    pub volfracs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub penals: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.5")]
    pub rmins: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; sweeps are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noisy pixels per copy; defaults to 1% of the pixel count.
    #[arg(long)]
    pub noise_count: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub noise_amplitude: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training settings. Unset fields keep the library defaults (or, with
/// `--resume`, the checkpoint's values).
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint; only --steps may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// `full` or `desk` (narrow layers for small images).
    #[arg(long)]
    pub plan: Option<String>,
    /// gan, cgan, crcgan-a or crcgan-b.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    /// Steps per iteration, or `auto` for one pass over the data.
    #[arg(long)]
    pub steps_per_iteration: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub z_dim: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub minibatch_discrimination: Option<String>,
    #[arg(long)]
    pub nonsaturating: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
    #[arg(long)]
    pub collapse_ratio: Option<String>,
    #[arg(long)]
    pub collapse_window: Option<String>,
    /// Two comma-separated channel counts.
    #[arg(long)]
    pub g_channels: Option<String>,
    #[arg(long)]
    pub d_channels: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub mb_kernels: Option<String>,
    #[arg(long)]
    pub mb_dim: Option<String>,
}

impl TrainArgs {
    /// Config keys set on the command line, in declaration order.
    pub fn overrides(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("objective", &self.objective),
            ("batch_size", &self.batch_size),
            ("steps", &self.steps),
            ("steps_per_iteration", &self.steps_per_iteration),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("z_dim", &self.z_dim),
            ("seed", &self.seed),
            ("minibatch_discrimination", &self.minibatch_discrimination),
            ("nonsaturating", &self.nonsaturating),
            ("margin", &self.margin),
            ("checkpoint_every", &self.checkpoint_every),
            ("collapse_ratio", &self.collapse_ratio),
            ("collapse_window", &self.collapse_window),
            ("g_channels", &self.g_channels),
            ("d_channels", &self.d_channels),
            ("features", &self.features),
            ("mb_kernels", &self.mb_kernels),
            ("mb_dim", &self.mb_dim),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class index for class models, target value for continuous ones.
    #[arg(long)]
    pub condition: String,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Montage columns; defaults to a square layout.
    #[arg(long)]
    pub cols: Option<usize>,
    /// Blur and threshold each sample before tiling.
    #[arg(long, action = clap::ArgAction::Set, default_value_t = false)]
    pub postprocess: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub condition: String,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// Also re-analyse each sample as a cantilever with this penalization.
    #[arg(long)]
    pub penal: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IdxImportArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Halve each side with 2x2 mean pooling.
    #[arg(long, action = clap::ArgAction::Set, default_value_t = false)]
    pub downscale: bool,
    /// Keep this many samples drawn at random (by --seed).
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    if e.downcast_ref::<UsageError>().is_some() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}
