use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quantlab_cli::commands::{
    cmd_gen, cmd_mxfp4_decode, cmd_mxfp4_encode, cmd_quantize, cmd_sweep, GenOptions,
};
use quantlab_cli::CliError;

#[derive(Parser)]
#[command(
    name = "quantlab",
    version,
    about = "Desk-scale post-training quantization laboratory",
    long_about = "Runs quantization recipes (pre-quantization transforms + INT/MXFP4 \
                  quantizers + error mitigation) over bundles of linear layers and \
                  reports per-layer error metrics."
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic model bundle with planted activation outliers.
    Gen {
        /// Number of layers.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Layer sizes (comma-separated, cycled over layers; layers are square).
        #[arg(long, value_delimiter = ',', default_value = "128")]
        dims: Vec<usize>,
        /// Calibration tokens per layer.
        #[arg(long, default_value_t = 512)]
        tokens: usize,
        /// Channels per layer carrying planted outliers.
        #[arg(long = "outlier-channels", default_value_t = 2)]
        outlier_channels: usize,
        /// Gain multiplier on outlier channels.
        #[arg(long = "outlier-gain", default_value_t = 100.0)]
        outlier_gain: f64,
        /// Constant offset added to outlier channels.
        #[arg(long, default_value_t = 0.0)]
        skew: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for tensors and manifest.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a quantization recipe over a model and write a report.
    Quantize {
        /// Path to manifest.toml.
        #[arg(long)]
        model: PathBuf,
        /// Path to the recipe document.
        #[arg(long)]
        recipe: PathBuf,
        /// Output report path.
        #[arg(long)]
        report: PathBuf,
        /// Also dump quantized weights, branch factors and transform
        /// parameters into this directory.
        #[arg(long = "emit-quantized")]
        emit_quantized: Option<PathBuf>,
    },
    /// Run one recipe across an axis of quantizer settings.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        /// Axis: granularity, symmetry, or format.
        #[arg(long)]
        axis: String,
        /// Axis values (comma-separated; defaults per axis).
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        report: PathBuf,
    },
    /// MXFP4 codec over tensor files. Encoding writes codes to --out plus a
    /// sibling `<out>.exp` tensor of per-group E8M0 exponents; decoding
    /// reads both back.
    Mxfp4 {
        #[arg(long, conflicts_with = "decode")]
        encode: bool,
        #[arg(long)]
        decode: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Clip ratio applied to group maxima before scale selection.
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Commands::Gen {
            layers,
            dims,
            tokens,
            outlier_channels,
            outlier_gain,
            skew,
            seed,
            out,
        } => cmd_gen(&GenOptions {
            layers,
            dims,
            tokens,
            outlier_channels,
            outlier_gain,
            skew,
            seed,
            out,
        }),
        Commands::Quantize {
            model,
            recipe,
            report,
            emit_quantized,
        } => cmd_quantize(&model, &recipe, &report, emit_quantized.as_deref()),
        Commands::Sweep {
            model,
            recipe,
            axis,
            values,
            report,
        } => cmd_sweep(&model, &recipe, &axis, values.as_deref(), &report),
        Commands::Mxfp4 {
            encode,
            decode,
            input,
            output,
            clip,
        } => {
            if encode == decode {
                return Err(CliError::validation(
                    "mxfp4 requires exactly one of --encode or --decode",
                ));
            }
            if encode {
                cmd_mxfp4_encode(&input, &output, clip)
            } else {
                cmd_mxfp4_decode(&input, &output)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
