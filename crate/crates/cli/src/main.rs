mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gfr", version, about = "Gabor filter-bank face recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration (unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Keep the `k` leading orthogonal filters.
    #[arg(long, global = true, conflicts_with = "select_variance")]
    pub select_k: Option<usize>,
    /// Keep the fewest filters reaching this fraction of filter variance.
    #[arg(long, global = true)]
    pub select_variance: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Manifest JSON file, or a directory with one sub-directory per subject
    /// (images treated as already cropped).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated split seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the Gabor bank, select orthogonal filters, dump kernels and the variance curve.
    BuildBank(#[command(flatten)] Common),
    /// Run the preprocessing chain on one image and dump the intermediates.
    Preprocess {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
        /// Treat the input as already cropped: only the illumination step runs.
        #[arg(long)]
        skip_detect: bool,
        /// Known eye centers as `lx,ly,rx,ry`.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        eyes: Option<Vec<f64>>,
    },
    /// Fit the pipeline and write a model file.
    Enroll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Model file to write.
        #[arg(long)]
        model: PathBuf,
        /// Enroll only the training part of the split with this seed.
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Identify one probe image against a model.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        image: PathBuf,
        #[arg(long)]
        skip_detect: bool,
        #[arg(long, value_delimiter = ',', num_args = 4)]
        eyes: Option<Vec<f64>>,
        /// Also print the N nearest gallery entries.
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
    /// Rank-1 evaluation over one or more seeded splits (or of a saved model).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Evaluate this model on every manifest image instead of splitting.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a parameter grid on the verification split.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Grid JSON with any of the axes k, rho, metric, f, r.
        #[arg(long)]
        grid: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::BuildBank(common) => commands::build_bank(&common),
        Command::Preprocess {
            common,
            image,
            skip_detect,
            eyes,
        } => commands::preprocess(&common, &image, skip_detect, eyes.as_deref()),
        Command::Enroll {
            common,
            data,
            model,
            split_seed,
        } => commands::enroll(&common, &data, &model, split_seed),
        Command::Identify {
            common,
            model,
            image,
            skip_detect,
            eyes,
            top,
        } => commands::identify(&common, &model, &image, skip_detect, eyes.as_deref(), top),
        Command::Evaluate { common, data, model } => commands::evaluate(&common, &data, model.as_deref()),
        Command::Sweep { common, data, grid } => commands::sweep(&common, &data, &grid),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
