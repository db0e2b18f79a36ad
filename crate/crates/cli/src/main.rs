//! `ced`: corpus synthesis, encoder training, P2V building, verifier training,
//! evaluation and single-pair verification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ced",
    version,
    about = "Open-vocabulary keyword spotting pipeline"
)]
pub struct Cli {
    /// Phoneme vocabulary file (one symbol per line); ARPAbet when omitted.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Pronunciation lexicon; the bundled dictionary when omitted.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus with train/dev/test splits.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the audio encoder with CTC.
    TrainEncoder {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out manifest for per-epoch CER.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training an encoder on another corpus at a constant learning rate.
    FineTune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the phoneme-to-vector database.
    BuildP2v {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fill uncovered phonemes with the mean vector instead of failing.
        #[arg(long)]
        allow_fallback: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the verifier head on a frozen encoder.
    TrainCed {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        p2v: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Replace confusable negatives with more random negatives.
        #[arg(long)]
        no_confusables: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble encoder, P2V database and verifier into a bundle directory.
    Bundle {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        p2v: PathBuf,
        #[arg(long)]
        verifier: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute AUC and EER on easy or hard test pairs.
    Eval(EvalArgs),
    /// Score one recording against a keyword.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        /// WAV file or feature matrix.
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        text: String,
        /// Decision threshold; the bundle's stored threshold when omitted.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print confusable phoneme sequences for a keyword.
    Confusables {
        #[arg(long)]
        keyword: String,
        #[arg(long)]
        delta: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of replace,insert.
        #[arg(long, default_value = "replace,insert")]
        ops: String,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = ["easy", "hard"])]
    pub mode: String,
    #[arg(long)]
    pub per_anchor: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record the EER threshold in the bundle for later `verify` calls.
    #[arg(long)]
    pub store_threshold: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Warn
        } else {
            log::LevelFilter::Info
        })
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
