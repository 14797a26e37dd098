mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dimquant::Error;

#[derive(Parser, Debug)]
#[command(
    name = "dimquant",
    version,
    about = "Dimension-wise latent quantization toolkit"
)]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file. Report-style subcommands print to stdout without it.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Ar,
    Parallel,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetArg {
    Independent,
    Equicorrelated,
    CopyChannel,
    SmoothVsNoise,
}

/// Quantizer flags. Unset values fall back to the defaults or, where a
/// sidecar exists, to the values recorded there.
#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Levels per channel (B).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Clipping radius in normalized units.
    #[arg(long)]
    pub r: Option<f64>,
    /// Lower end of the feature range.
    #[arg(long, allow_hyphen_values = true)]
    pub min: Option<f64>,
    /// Upper end of the feature range.
    #[arg(long, allow_hyphen_values = true)]
    pub max: Option<f64>,
    /// gaussian or linear.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a quantizer grid as JSON.
    Grid(GridArgs),
    /// Write seeded synthetic latents with a sidecar.
    Synth {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        h: usize,
        #[arg(long, default_value_t = 16)]
        w: usize,
        #[arg(long, default_value_t = 16)]
        c: usize,
        #[arg(long, value_enum, default_value_t = PresetArg::Independent)]
        preset: PresetArg,
        /// Correlation for the equicorrelated preset.
        #[arg(long, default_value_t = 0.9, allow_hyphen_values = true)]
        rho: f64,
        /// Multiplier applied to every value.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Encode latents into tokens.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Decode tokens back into latents.
    Dequantize {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Codec report for original latents and their reconstruction.
    Stats {
        #[arg(long)]
        original: PathBuf,
        /// Reconstructed latents; when omitted the original is round-tripped.
        #[arg(long)]
        roundtrip: Option<PathBuf>,
        /// Report errors in the normalized domain instead of the feature domain.
        #[arg(long)]
        normalized: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Channel generation order by low-frequency energy.
    Order {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = dimquant::spectral::DEFAULT_RADIUS_FRAC)]
        radius_frac: f64,
        /// Record the permutation in the input's sidecar.
        #[arg(long)]
        update_sidecar: bool,
    },
    /// Train the autoregressive head on a token file.
    TrainHead {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ar)]
        mode: ModeArg,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 8e-4)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        embed_dim: usize,
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 16)]
        context_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        label_dropout: f64,
        /// Loss curve path; defaults to `<output>.losses.json`.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Generate latents, tokens and a confidence map.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        h: usize,
        #[arg(long, default_value_t = 16)]
        w: usize,
        #[arg(long, default_value_t = 0.97)]
        temperature: f64,
        #[arg(long, default_value_t = 3.1)]
        guidance: f64,
        /// off, topk:K or thr:T
        #[arg(long, default_value = "off")]
        confidence: String,
        #[arg(long, default_value_t = 0)]
        label: usize,
    },
    /// Per-position NLL of a token file under a checkpoint.
    EvalHead {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Must match the checkpoint's mode when given.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Time channel-sequential sampling.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Positions generated per run (an h × h map).
        #[arg(long, default_value_t = 4)]
        h: usize,
    },
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Npy(_)
            | Error::Metadata(_)
            | Error::Upgrade { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Data(_) => 2,
            Error::Domain(_) | Error::Divergence { .. } => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
