mod commands;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ssdm_core::noisegen::NoiseKind;
use ssdm_core::Sampler;

/// Exit statuses. Usage errors use clap's status 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Internal = 1,
    Usage = 2,
    InvalidInput = 3,
    Io = 4,
    BadData = 5,
    Numerical = 6,
    Diverged = 7,
}

#[derive(Debug, Parser)]
#[command(
    name = "ssdm",
    version,
    about = "Denoise stepwise single-molecule signals with a diffusion model"
)]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate clean (and optionally noisy) traces from a rate-matrix catalog.
    Generate(GenerateArgs),
    /// Add calibrated noise to a clean trace.
    Corrupt(CorruptArgs),
    /// Train the noise predictor on clean traces.
    Train(TrainArgs),
    /// Denoise a trace with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score a denoised trace against ground truth.
    Eval(EvalArgs),
    /// Run a comparison method on a trace.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Compare methods across SNR levels on a synthetic test set.
    Benchmark(BenchmarkArgs),
    /// Kinetics and event analyses of experimental traces.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Butterworth low-pass filter.
    Lowpass(LowpassArgs),
    /// Gaussian HMM with BIC state selection and posterior decoding.
    Hmm(HmmArgs),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Two-state dwell-time kinetics of an sm-FRET trace.
    Fret(FretArgs),
    /// Threshold event extraction from a nanopore current trace.
    Nanopore(NanoporeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// `train`, `test` or a catalog JSON file.
    #[arg(long, default_value = "train")]
    pub catalog: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to 300 for the training catalog and 20 otherwise.
    #[arg(long)]
    pub traces_per_matrix: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    /// Keep only matrices with this many states.
    #[arg(long)]
    pub k: Option<usize>,
    /// Also write noisy copies at these SNRs (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub snr: Vec<f64>,
    #[arg(long, default_value = "white")]
    pub noise: NoiseKind,
}

#[derive(Debug, Args, Serialize)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub snr: f64,
    #[arg(long, default_value = "white")]
    pub noise: NoiseKind,
    /// Number of evenly spaced levels in the clean trace.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`; clean traces are used.
    #[arg(long, conflicts_with = "catalog")]
    pub data: Option<PathBuf>,
    /// Simulate the training set in memory from this catalog instead.
    #[arg(long)]
    pub catalog: Option<String>,
    #[arg(long, default_value_t = 300)]
    pub traces_per_matrix: usize,
    #[arg(long)]
    pub k: Option<usize>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 7.61e-5)]
    pub lr0: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 14.53)]
    pub lambda_amp: f64,
    #[arg(long, default_value_t = 8.95)]
    pub lambda_edge: f64,
    /// `magnitude` or `literal`.
    #[arg(long, default_value = "magnitude")]
    pub edge_mode: String,
    /// Network width; 192 is the full-size model.
    #[arg(long, default_value_t = 32)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reverse-chain start step; estimated from the trace noise by default.
    #[arg(long)]
    pub t_start: Option<usize>,
    /// Reverse-chain noise: `mean` (z = 0) or `ancestral`.
    #[arg(long, default_value = "mean")]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input is already on the model's [0, 1] scale; skip percentile normalisation.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Transition matching tolerance in samples.
    #[arg(long, default_value_t = 2)]
    pub tolerance: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LowpassArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Cutoff in cycles/sample. Without it the cutoff is tuned against `--gt`.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long, requires = "k")]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Single forward pass instead of zero-phase filtering.
    #[arg(long)]
    pub causal: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct HmmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed state count; selected by BIC over 2..=6 otherwise.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Required when the method list includes `ssdm`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ssdm,lowpass,hmm")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,3,5")]
    pub snr: Vec<f64>,
    #[arg(long, default_value = "white")]
    pub noise: NoiseKind,
    #[arg(long, default_value = "test")]
    pub catalog: String,
    #[arg(long, default_value_t = 20)]
    pub traces_per_matrix: usize,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long, default_value = "mean")]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FretArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Sample interval in seconds.
    #[arg(long)]
    pub dt: f64,
    /// Denoise with this checkpoint before the analysis.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// State threshold; the midpoint of the two levels by default.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long, default_value = "mean")]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NanoporeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dt: f64,
    #[arg(long)]
    pub threshold: f64,
    /// Open-pore level; the trace median by default.
    #[arg(long)]
    pub baseline_level: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub min_duration: usize,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long, default_value = "mean")]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn status_of(err: &anyhow::Error) -> Status {
    use ssdm_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::RateMatrix(_)
                | E::InvalidArgument(_)
                | E::LengthMismatch { .. }
                | E::StepOutOfRange { .. } => Status::InvalidInput,
                E::Io { .. } => Status::Io,
                E::Format { .. } | E::Checkpoint(_) | E::Json(_) => Status::BadData,
                E::NonFinite(_) | E::Numerical(_) => Status::Numerical,
                E::Diverged { .. } => Status::Diverged,
            };
        }
        if cause.downcast_ref::<commands::InvalidInput>().is_some() {
            return Status::InvalidInput;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Status::Io;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return Status::BadData;
        }
    }
    Status::Internal
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                Status::Usage as u8
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Corrupt(a) => commands::corrupt(&a),
        Command::Train(a) => commands::train(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Baseline(BaselineCommand::Lowpass(a)) => commands::lowpass(&a),
        Command::Baseline(BaselineCommand::Hmm(a)) => commands::hmm(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Analyze(AnalyzeCommand::Fret(a)) => commands::fret(&a),
        Command::Analyze(AnalyzeCommand::Nanopore(a)) => commands::nanopore(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(status_of(&e) as u8)
        }
    }
}
