use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lassl::Error;

mod commands;
mod svg;

#[derive(Parser, Debug)]
#[command(name = "lassl", version, about = "Learning-speed-aware sampling for contrastive pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sampler hyperparameter bundle applied before the config file.
    #[arg(long, value_parser = ["cifar-like", "celeba-like"])]
    recipe: Option<String>,
    /// Worker threads; output is bit-reproducible only with 1.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain one run per configured seed.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Run directory; falls back to `output_dir` in the config.
        #[arg(long, env = "LASSL_OUTPUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Fit a linear probe on frozen representations and report subgroup metrics.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the checkpoint's directory.
        #[arg(long, env = "LASSL_OUTPUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Singular spectrum of the training-set representations.
    Spectra {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "LASSL_OUTPUT_DIR")]
        out: Option<PathBuf>,
        /// Also write an SVG line chart.
        #[arg(long)]
        svg: bool,
    },
    /// Paired comparison of two run directories (B minus A).
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, env = "LASSL_OUTPUT_DIR")]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InsufficientDimension { .. } | Error::InsufficientGroup { .. } => 2,
        Error::Format(_) | Error::Version { .. } | Error::Consistency(_) | Error::Io(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common, out } => commands::gen_data(&common.into(), &out),
        Command::Pretrain { common, data, out } => commands::pretrain(&common.into(), &data, out),
        Command::Probe { common, checkpoint, data, out } => commands::probe(&common.into(), &checkpoint, &data, out),
        Command::Spectra { checkpoint, data, out, svg } => commands::spectra(&checkpoint, &data, out, svg),
        Command::Compare { run_a, run_b, out } => commands::compare(&run_a, &run_b, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

impl From<Common> for commands::Options {
    fn from(c: Common) -> Self {
        commands::Options { config: c.config, recipe: c.recipe, threads: c.threads }
    }
}
