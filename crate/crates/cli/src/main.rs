//! `dam2p`: synthetic corpus generation, preprocessing, training, evaluation,
//! ablation, sweeps and latent export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dam2p::corpus::DomainStyle;
use dam2p::Error;

use crate::config::TrainFlags;

#[derive(Parser, Debug)]
#[command(name = "dam2p", version, about = "Cross-project vulnerability detection")]
struct Cli {
    /// Directory for all outputs. Falls back to $DAM2P_OUTPUT_DIR, then the
    /// config's output_dir, then the working directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus as JSONL.
    Gen {
        /// Number of functions.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Fraction labeled vulnerable.
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        /// Coding style of the domain: a or b.
        #[arg(long, default_value = "a")]
        style: DomainStyle,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file [default: <output-dir>/<domain>.jsonl].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalize, rename, split and tokenize a dataset.
    Preprocess {
        /// Raw dataset JSONL.
        #[arg(long)]
        input: PathBuf,
        /// Preprocessed JSONL [default: <output-dir>/<input stem>.pre.jsonl].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the vocabulary built from this file.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        /// Minimum token count for the vocabulary.
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Train one model; writes checkpoint.json, history.csv, vocab.txt and the
    /// held-out target split.
    Train(TrainFlags),
    /// Score a labeled dataset with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Override the checkpoint's threshold (a number or -inf).
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
    },
    /// Run every ablation mode with the same settings.
    Ablate(TrainFlags),
    /// Grid over lambda, alpha and hidden size.
    Sweep {
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated lambda values.
        #[arg(long = "grid-lambda", value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Comma-separated alpha values.
        #[arg(long = "grid-alpha", value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Comma-separated hidden sizes.
        #[arg(long = "grid-hidden", value_delimiter = ',')]
        hidden: Vec<usize>,
    },
    /// Write the latent vector of every function to CSV.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV [default: <output-dir>/latents.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process exit codes, one per failure class.
mod exit {
    pub const IO: u8 = 1;
    pub const MISSING_FILE: u8 = 3;
    pub const SCHEMA: u8 = 4;
    pub const NUMERIC: u8 = 5;
}

fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        _ if e.is_numeric() => (exit::NUMERIC, "numeric"),
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (exit::MISSING_FILE, "missing-file"),
        Error::Io { .. } => (exit::IO, "io"),
        Error::AtStep { source, .. } => classify(source),
        _ => (exit::SCHEMA, "schema"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.output_dir.as_deref();
    let result = match cli.command {
        Command::Gen { n, ratio, style, seed, out: file } => commands::gen(n, ratio, style, seed, file, out),
        Command::Preprocess { input, out: file, vocab_out, min_count } => {
            commands::preprocess(&input, file, vocab_out, min_count, out)
        }
        Command::Train(flags) => flags.resolve(out).and_then(|c| commands::train(&c)),
        Command::Eval { checkpoint, dataset, threshold } => commands::eval(&checkpoint, &dataset, threshold, out),
        Command::Ablate(flags) => flags.resolve(out).and_then(|c| commands::ablate(&c)),
        Command::Sweep { flags, lambda, alpha, hidden } => {
            flags.resolve(out).and_then(|c| commands::sweep(&c, lambda, alpha, hidden))
        }
        Command::ExportLatents { checkpoint, dataset, out: file } => {
            commands::export_latents(&checkpoint, &dataset, file, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={kind} code={code} message={}", serde_json::Value::String(msg));
            ExitCode::from(code)
        }
    }
}
