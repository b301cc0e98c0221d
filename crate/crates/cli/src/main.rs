use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Epitome learning and patch-based denoising for grayscale images.
#[derive(Debug, Parser)]
#[command(name = "epitome", version)]
struct Cli {
    /// Worker threads; defaults to $EPITOME_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn an epitome set from an image.
    Train(TrainArgs),
    /// Denoise an image with a stored or freshly learned epitome.
    Denoise(DenoiseArgs),
    /// Add seeded Gaussian noise to an image.
    Noise(NoiseArgs),
    /// Print the PSNR between two images (peak 255).
    Psnr { a: PathBuf, b: PathBuf },
    /// Render a stored epitome set as an image.
    Render {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the operator, gradient and solver self-checks.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Epitome and learner settings shared by `train` and `denoise`.
#[derive(Debug, Clone, Args)]
struct LearnArgs {
    #[arg(long, default_value_t = 20)]
    epitomes: usize,
    /// Epitome height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [15, 15])]
    epi_size: Vec<usize>,
    /// Square patch side.
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Regularization for [0, 1] intensities; a calibrated default when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 3)]
    scales: usize,
    #[arg(long, default_value_t = 2.0)]
    ratio: f64,
    /// Outer iterations per scale, coarsest first (comma separated).
    #[arg(long, value_delimiter = ',')]
    iters: Option<Vec<usize>>,
    /// Inner dictionary-update iterations.
    #[arg(long, default_value_t = 20)]
    fista_iters: usize,
    /// Spacing of training patches.
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    image: PathBuf,
    #[command(flatten)]
    learn: LearnArgs,
    /// Noise level of the image; picks the calibrated lambda when given.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-iteration objective log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    image: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, conflicts_with = "train_on_input", required_unless_present = "train_on_input")]
    model: Option<PathBuf>,
    /// Learn the epitome on the noisy image itself.
    #[arg(long)]
    train_on_input: bool,
    #[command(flatten)]
    learn: LearnArgs,
    /// OMP gain: patches are coded until the residual is below m (C sigma)^2.
    #[arg(long = "C", default_value_t = 1.15)]
    gain: f64,
    /// Treat the input as clean and add noise with this seed first.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Clean reference for the PSNR columns of the report.
    #[arg(long, conflicts_with = "noise_seed")]
    clean: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Append a TSV report row here (header written for new files).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    image: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A failure reported as one tab-separated line on stderr.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    /// Attaches the offending path to I/O errors.
    pub fn at(path: &Path) -> impl FnOnce(epitome::EpitomeError) -> Failure + '_ {
        move |e| match e {
            epitome::EpitomeError::Io(io) => Failure::new("io", format!("{}: {io}", path.display())),
            other => other.into(),
        }
    }
}

impl From<epitome::EpitomeError> for Failure {
    fn from(e: epitome::EpitomeError) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("EPITOME_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::new("usage", format!("EPITOME_THREADS must be a count, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new("usage", e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Noise(a) => commands::noise(a),
        Command::Psnr { a, b } => commands::psnr(&a, &b),
        Command::Render { model, out } => commands::render(&model, &out),
        Command::Check { seed } => commands::check(seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error\tusage\t{}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error\t{}\t{}", f.kind, f.message.replace(['\n', '\t'], " "));
            ExitCode::from(1)
        }
    }
}
