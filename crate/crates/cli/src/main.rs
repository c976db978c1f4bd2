mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Sound-to-vibration synthesis with an operational U-Net and a cascaded
/// Self-ONN fault detector.
#[derive(Debug, Parser)]
#[command(name = "opvib", version, args_override_self = true)]
pub struct Cli {
    /// Seed for initialisation, shuffling and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Run single-threaded so every output is byte-identical across runs.
    #[arg(long, global = true)]
    pub reproducible: bool,

    /// Plain-text key=value file with defaults for any long flag.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic paired dataset (float32 WAVs + manifest.tsv).
    GenSynthetic(GenSyntheticArgs),
    /// Pre-train the Self-ONN fault detector on real vibration.
    TrainDetector(TrainDetectorArgs),
    /// Train the Op-UNet transformer cascaded with a frozen detector.
    TrainTransformer(TrainTransformerArgs),
    /// Synthesize vibration from a sound recording.
    Synthesize(SynthesizeArgs),
    /// Score the detector on real or synthesized vibration.
    Evaluate(EvaluateArgs),
    /// Time single-segment transformer inference.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenSyntheticArgs {
    /// Number of healthy segments.
    #[arg(long, default_value_t = 60)]
    pub healthy: usize,
    /// Number of faulty segments.
    #[arg(long, default_value_t = 60)]
    pub faulty: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub sample_rate: u32,
    /// Samples per segment (one file pair per segment).
    #[arg(long, default_value_t = 4096)]
    pub segment_samples: usize,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 640.0)]
    pub fault_frequency: f64,
    #[arg(long, default_value_t = 0.8)]
    pub fault_amplitude: f64,
    /// Comma-separated speeds (RPM), assigned round-robin.
    #[arg(long, default_value = "480,680,1010", value_delimiter = ',')]
    pub speeds: Vec<u32>,
}

/// Dataset selection shared by the training and evaluation commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Tab-separated dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Speed kept out of training for testing [default: highest speed].
    #[arg(long)]
    pub held_out_speed: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub segment_seconds: f64,
    /// Seconds of chronological data used for training.
    #[arg(long, default_value_t = 2100.0)]
    pub train_seconds: f64,
    /// Seconds following the training block used for validation.
    #[arg(long, default_value_t = 800.0)]
    pub val_seconds: f64,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Directory for best-so-far checkpoints written during training.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainDetectorArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Training epochs.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Output checkpoint.
    #[arg(long, default_value = "detector.opvb")]
    pub out: PathBuf,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassLossArg {
    /// Detector scores on real vs. synthesized vibration.
    Paired,
    /// Detector scores on synthesized vibration vs. the label encoding.
    Label,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpectrumArg {
    Magnitude,
    Power,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitArg {
    Updates,
    Epochs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainTransformerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Pre-trained detector checkpoint (cascaded, frozen).
    #[arg(long)]
    pub detector: PathBuf,
    /// Maximum iterations.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Whether an iteration is one mini-batch update or one epoch.
    #[arg(long, value_enum, default_value_t = UnitArg::Updates)]
    pub iter_unit: UnitArg,
    /// Weight of the time and STFT terms.
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    /// Updates between validation passes.
    #[arg(long, default_value_t = 50)]
    pub val_interval: usize,
    #[arg(long, value_enum, default_value_t = ClassLossArg::Paired)]
    pub class_loss: ClassLossArg,
    #[arg(long, value_enum, default_value_t = SpectrumArg::Magnitude)]
    pub spectrum: SpectrumArg,
    /// Update the detector together with the transformer (ablation).
    #[arg(long)]
    pub joint: bool,
    /// Output checkpoint (best validation loss).
    #[arg(long, default_value = "transformer.opvb")]
    pub out: PathBuf,
    /// Also write the per-iteration loss lines to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthesizeArgs {
    /// Transformer checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Input sound recording (WAV or CSV).
    #[arg(long)]
    pub sound: PathBuf,
    /// Output float32 WAV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Detector checkpoint.
    #[arg(long)]
    pub detector: PathBuf,
    /// Transformer checkpoint; when given the detector sees synthesized vibration.
    #[arg(long)]
    pub transformer: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label for the training data in the table.
    #[arg(long, default_value = "RA")]
    pub train_name: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchmarkArgs {
    /// Transformer checkpoint [default: freshly initialised default architecture].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Timed repetitions (at least 10).
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(10..))]
    pub reps: u64,
    /// Untimed warm-up repetitions.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Invalid user input detected after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_args(args: Vec<OsString>) -> Result<Cli, (u8, String)> {
    let cmd = Cli::command();
    let args = match config::find_config_arg(&args) {
        Some(path) => {
            let map = config::read_config(PathBuf::from(path).as_path()).map_err(|e| (1, format!("error: {e:#}")))?;
            config::splice_config(&cmd, args, &map).map_err(|e| (2, format!("error: {e:#}")))?
        }
        None => args,
    };
    let matches = cmd.try_get_matches_from(args).map_err(|e| {
        let code = if e.use_stderr() { 2 } else { 0 };
        (code, e.render().ansi().to_string())
    })?;
    Cli::from_arg_matches(&matches).map_err(|e| (2, e.to_string()))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            if record.level() <= log::Level::Warn {
                writeln!(buf, "{}: {}", record.level().as_str().to_lowercase(), record.args())
            } else {
                writeln!(buf, "{}", record.args())
            }
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match parse_args(std::env::args_os().collect()) {
        Ok(c) => c,
        Err((code, msg)) => {
            if code == 0 {
                print!("{msg}");
            } else {
                eprint!("{msg}");
                if !msg.ends_with('\n') {
                    eprintln!();
                }
            }
            return ExitCode::from(code);
        }
    };
    init_logging();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
