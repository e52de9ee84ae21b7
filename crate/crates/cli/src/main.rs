mod commands;
mod config;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psnerv::compression::TableMode;

use config::Overrides;

/// Patch-wise implicit neural video codec.
///
/// Log verbosity follows RUST_LOG (e.g. RUST_LOG=info).
#[derive(Parser)]
#[command(name = "psnerv", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of frame_%06d.png files
    Encode {
        frames: PathBuf,
        /// Output checkpoint; logs and the effective config go next to it
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render frames from a raw or compressed model
    Decode {
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Comma-separated 0-based frame indices (default: all)
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        #[arg(long)]
        sequential: bool,
    },
    /// Prune, quantize and entropy-code a model
    Compress {
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        bits: Option<u8>,
        #[arg(long, value_enum)]
        table_mode: Option<TableModeArg>,
        /// JSON run configuration (its compress section and training settings are used)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fine-tune for this many epochs after pruning (needs --source)
        #[arg(long)]
        finetune_epochs: Option<usize>,
        /// Source frames for fine-tuning
        #[arg(long)]
        source: Option<PathBuf>,
        /// JSON report path (default: <out>.report.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare two frame directories
    Metrics {
        reference: PathBuf,
        decoded: PathBuf,
        /// Model file whose size gives the bits-per-pixel figure
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Train without the masked patches, then decode every patch
    Inpaint {
        frames: PathBuf,
        /// JSON {"excluded": [[t, p], ...]} or a directory of mask PNGs
        #[arg(long)]
        mask: PathBuf,
        /// Output directory
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One-dimensional point/section/whole fitting study
    Toyfit {
        /// Output directory
        #[arg(long, short)]
        out: PathBuf,
        /// JSON toy configuration
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Text file with one target sample per line
        #[arg(long)]
        target_file: Option<PathBuf>,
        /// Also write an SVG line plot
        #[arg(long)]
        svg: bool,
    },
    /// Print header, parameter counts and byte accounting of a model file
    Inspect {
        model: PathBuf,
        /// Emit JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic moving-disk test video
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TableModeArg {
    Global,
    PerTensor,
}

impl From<TableModeArg> for TableMode {
    fn from(v: TableModeArg) -> Self {
        match v {
            TableModeArg::Global => TableMode::Global,
            TableModeArg::PerTensor => TableMode::PerTensor,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Encode { frames, out, overrides } => commands::encode(&frames, &out, &overrides),
        Command::Decode { model, out, frames, sequential } => {
            commands::decode(&model, &out, frames.as_deref(), !sequential)
        }
        Command::Compress { model, out, sparsity, bits, table_mode, config, finetune_epochs, source, report } => {
            commands::compress(&commands::CompressArgs {
                model,
                out,
                sparsity,
                bits,
                table_mode: table_mode.map(Into::into),
                config,
                finetune_epochs,
                source,
                report,
            })
        }
        Command::Metrics { reference, decoded, model_file, out, sequential } => {
            commands::metrics(&reference, &decoded, model_file.as_deref(), out.as_deref(), !sequential)
        }
        Command::Inpaint { frames, mask, out, overrides } => commands::inpaint(&frames, &mask, &out, &overrides),
        Command::Toyfit { out, config, seed, steps, target_file, svg } => {
            commands::toyfit(&out, config.as_deref(), seed, steps, target_file.as_deref(), svg)
        }
        Command::Inspect { model, json } => commands::inspect(&model, json),
        Command::Synth { out, frames, height, width, seed } => commands::synth(&out, frames, height, width, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
