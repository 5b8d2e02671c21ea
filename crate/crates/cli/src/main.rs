//! `pulseguard` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "pulseguard",
    version,
    about = "PPG cardiac anomaly detection with an LSTM autoencoder"
)]
struct Cli {
    /// Pipeline configuration (JSON). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the global, corpus and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labeled synthetic records for every configured population.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen synthesized records into a clean training corpus.
    BuildCorpus {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Model file to write; the loss history goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag anomalous regions in every record.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write an SVG overlay for every flagged segment.
        #[arg(long)]
        plot: bool,
        /// Correlation threshold; windows with r below it are anomalous.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Align detections with the gold standard and compute confusion matrices.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum GS PVCs per minute for a positive minute; repeatable.
        #[arg(long = "min-pvc", value_delimiter = ',')]
        min_pvc: Vec<u32>,
    },
    /// Merge one or more evaluation reports.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// `eval.json` files or directories containing one.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("PULSEGUARD_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!(
                "PULSEGUARD_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = commands::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.corpus.seed = seed;
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::BuildCorpus { records, out } => commands::build_corpus(&cfg, &records, &out),
        Command::Train { corpus, out } => commands::train(&cfg, &corpus, &out),
        Command::Detect {
            model,
            records,
            out,
            plot,
            threshold,
        } => {
            if let Some(t) = threshold {
                cfg.detector.threshold = t;
            }
            commands::validate(&cfg)?;
            commands::detect(&cfg, &model, &records, &out, plot)
        }
        Command::Eval {
            detections,
            gs,
            out,
            min_pvc,
        } => {
            if !min_pvc.is_empty() {
                cfg.eval.min_pvc = min_pvc;
            }
            commands::validate(&cfg)?;
            commands::eval(&cfg, &detections, &gs, &out)
        }
        Command::Report { out, inputs } => commands::report(&inputs, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| match threads {
        Some(n) => pulseguard::par::with_threads(n, || run(cli)),
        None => run(cli),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
