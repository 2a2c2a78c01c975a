//! `psparse` — pattern-based sparsity pipeline driver.
//!
//! Subcommands: `derive` (theoretical pattern libraries), `train` (dense
//! baseline), `extract` (ADMM pattern library extraction), `prune` (hard
//! pattern masks + connectivity pruning + fine-tune), `pack` (compact
//! `.psp` model), `infer`, `verify` (dense-vs-sparse equivalence), `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure, 3 numeric
//! divergence.

mod config;
mod data;
mod ops;

use clap::{Args, Parser, Subcommand};
use psparse_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "psparse", version, about = "Pattern-based sparsity pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand, all overridable from a key=value
/// config file (flag wins over file, file wins over default).
#[derive(Args, Debug)]
struct Common {
    /// RNG seed; every command is deterministic given its inputs and seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the sparse engine
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative tolerance for dense-vs-sparse comparisons
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// "synth" for the bundled blob generator, or a directory of
    /// MNIST-layout IDX files
    #[arg(long, default_value = "synth")]
    data: String,
    /// Training samples to generate or load
    #[arg(long)]
    samples: Option<usize>,
    /// Number of classes
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic image side length
    #[arg(long)]
    image_size: Option<usize>,
    /// Synthetic pixel noise amplitude
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the derived pattern libraries (Gaussian set, ELoG set, their
    /// 8-pattern union) as JSON, with a numeric derivation report
    Derive {
        #[command(flatten)]
        common: Common,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the dense toy CNN baseline and save it as .pnm
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Output model path (.pnm)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run ADMM pattern-library extraction on a model (a fresh toy model
    /// when --model is omitted)
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Starting model (.pnm); a fresh seeded toy model when omitted
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated K schedule, e.g. 126,12,8
        #[arg(long)]
        schedule: Option<String>,
        /// ADMM penalty weight
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        epochs_per_step: Option<usize>,
        /// Full ADMM iterations at the final K
        #[arg(long)]
        admm_iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        z_lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Output directory (library.json, assignment.pas, model.pnm,
        /// extract_log.csv, config.txt)
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply hard pattern masks, connectivity-prune, and fine-tune
    Prune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Assignment file (.pas) from extract
        #[arg(long)]
        assignment: PathBuf,
        /// Kernel keep ratio: one value for all layers or a comma list
        /// per conv layer
        #[arg(long)]
        keep_ratio: Option<String>,
        /// Prune-retrain rounds
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Output directory (model.pnm, assignment.pas, config.txt)
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack a pruned model into the compact .psp format
    Pack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Output file (.psp)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run sparse inference over test samples and print predictions
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        packed: PathBuf,
        /// Samples to run
        #[arg(long)]
        count: Option<usize>,
    },
    /// Check sparse execution against the dense reference
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        packed: PathBuf,
        /// Optional pruned .pnm to cross-check against unpack(packed)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Random input batches to compare
        #[arg(long)]
        batches: Option<usize>,
        /// Input side length
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Time dense vs sparse execution and emit a CSV report
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        packed: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        /// Comma-separated thread counts for the sparse path
        #[arg(long = "thread-list")]
        thread_list: Option<String>,
        #[arg(long)]
        image_size: Option<usize>,
        /// CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Verification(_) | Error::NotPatternPruned(_) => 2,
        Error::Divergence(_) | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match ops::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
