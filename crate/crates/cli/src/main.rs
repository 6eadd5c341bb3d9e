//! `helevel`: plan, price, compare and validate HE inference graphs.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "helevel",
    version,
    about = "Bootstrap planning and cost estimation for HE inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one network and write its cost report and planned graph.
    Analyze {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        common: Common,
        /// Activation degree (replaces the preset or graph degree).
        #[arg(long)]
        degree: Option<u32>,
    },
    /// Compare several networks, one row per (network, degree).
    Compare {
        /// Preset networks, in row order.
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// `.hegraph` files, listed after the presets.
        #[arg(long = "graph")]
        graphs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Activation degrees, comma separated or repeated.
        #[arg(long = "degree", value_delimiter = ',', default_value = "8")]
        degrees: Vec<u32>,
    },
    /// Run the plan on the mock backend and check it against static analysis.
    Validate {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        degree: Option<u32>,
        /// Named-tensor container with the network weights (random if omitted).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct Target {
    /// Built-in network such as `toy-ref` or `resnet50-ssd`.
    #[arg(long)]
    preset: Option<String>,
    /// `.hegraph` document; planned documents are used as given.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Common {
    /// `key=value` pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` cost weights, applied after `--config`.
    #[arg(long = "weights-config")]
    weights_config: Option<PathBuf>,
    /// Override `planner.max_level`.
    #[arg(long = "max-level")]
    max_level: Option<u32>,
    /// Directory for report files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Seed for random inputs, weights and noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze {
            target,
            common,
            degree,
        } => commands::analyze(&target, &common, degree),
        Command::Compare {
            presets,
            graphs,
            common,
            degrees,
        } => commands::compare(&presets, &graphs, &common, &degrees),
        Command::Validate {
            target,
            common,
            degree,
            weights,
        } => commands::validate(&target, &common, degree, weights.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
