//! `partscope` — build part datasets, train part detectors on a frozen
//! backbone, explain predictions through part ablation, and score the
//! explanations with causal curve metrics.

mod commands;
mod config;
mod overlay;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Input/config failures exit 2, pipeline failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Pipeline(String),
}

impl CliError {
    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn pipeline(msg: impl std::fmt::Display) -> Self {
        CliError::Pipeline(msg.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "partscope",
    version,
    about = "Part-based explanations for image classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the visible part list for a concept.
    Parts {
        /// Concept id (e.g. "horse").
        concept: String,
        /// Knowledge base: "pascal", "imagenet" or a JSON file path.
        #[arg(long, default_value = "pascal")]
        kb: String,
    },
    /// Build a part dataset: collect, dedupe, de-outlier, balance, split.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Holonym class to build the dataset for.
        #[arg(long)]
        holonym: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the meronym head for a holonym class.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        holonym: String,
        /// Skip silently if the model already exists.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Explain one or more images.
    Explain {
        #[arg(long)]
        config: PathBuf,
        /// Image files.
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score explanation reports with causal curves and baselines.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory of *.report.json files (default: <output_dir>/explanations).
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Also score the holonym Grad-CAM global heatmap.
        #[arg(long)]
        against_gradcam: bool,
        /// Part bounding-box sidecar for localization AUC.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Emit SVG curve plots.
        #[arg(long)]
        plots: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-search the binarization percentile on training images.
    TuneQ {
        #[arg(long)]
        config: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parts { concept, kb } => commands::parts::run(&concept, &kb),
        Command::Build {
            config,
            holonym,
            seed,
        } => config::load(&config, seed).and_then(|cfg| commands::build::run(&cfg, &holonym)),
        Command::Train {
            config,
            holonym,
            resume,
            seed,
        } => config::load(&config, seed)
            .and_then(|cfg| commands::train::run(&cfg, &holonym, resume)),
        Command::Explain {
            config,
            images,
            jobs,
            seed,
        } => config::load(&config, seed)
            .and_then(|cfg| commands::explain::run(&cfg, &images, jobs)),
        Command::Eval {
            config,
            reports,
            against_gradcam,
            gt,
            plots,
            jobs,
            seed,
        } => config::load(&config, seed).and_then(|cfg| {
            commands::eval::run(
                &cfg,
                reports.as_deref(),
                against_gradcam,
                gt.as_deref(),
                plots,
                jobs,
            )
        }),
        Command::TuneQ {
            config,
            images,
            seed,
        } => config::load(&config, seed).and_then(|cfg| commands::tune::run(&cfg, &images)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
