//! `freqdyn`: one binary for the whole workflow — synthetic data generation,
//! feature extraction, mean-teacher training, event-level evaluation,
//! attention diagnostics, gradient checking, and parameter counting.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numeric failure, 3 IO.

mod commands;
mod config;
mod data;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use freqdyn_core::Error;

use commands::WhichModel;

#[derive(Parser)]
#[command(name = "freqdyn", version, about = "Frequency-adaptive convolution toolkit")]
struct Cli {
    /// Root seed; all randomness derives from it through named substreams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for clip-parallel stages (fallback: FREQDYN_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: WAV clips, TSV labels, split manifest.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract normalized log-mel tensors for every clip of a dataset.
    Features {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; checkpoints after every epoch into <out>/checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in <out>, if present.
        #[arg(long)]
        resume: bool,
        /// Override [model].variant from the config.
        #[arg(long)]
        variant: Option<String>,
        /// Stop after this many epochs (checkpoint kept; resume later).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a trained run: collar F1 per class plus a proxy-PSDS sweep.
    Eval {
        /// Run directory written by `train` (config echo + checkpoint).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, value_enum, default_value = "best-student")]
        model: WhichModel,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump attention diagnostics: PCA coordinates and variance per layer.
    Diag {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "best-student")]
        model: WhichModel,
        /// Number of clips to pass through the model.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
    /// Verify reverse-mode gradients against central differences.
    Gradcheck {
        /// primitive | variant | model | all
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Print parameter counts for every model variant.
    Params {
        #[arg(long)]
        toy: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape(_) => 1,
        Error::Numeric(_) => 2,
        Error::Io(_) => 3,
    }
}

fn dispatch(cli: Cli) -> freqdyn_core::Result<()> {
    let threads = util::resolve_threads(cli.threads)?;
    match cli.cmd {
        Cmd::Gen { config, out } => commands::cmd_gen(&config, &out, cli.seed, threads),
        Cmd::Features { config, data, out } => {
            commands::cmd_features(&config, &data, &out, threads)
        }
        Cmd::Train { config, data, out, resume, variant, stop_after } => commands::cmd_train(
            &config,
            &data,
            &out,
            cli.seed,
            threads,
            resume,
            variant.as_deref(),
            stop_after,
        ),
        Cmd::Eval { run, data, split, model, out } => {
            commands::cmd_eval(&run, &data, &split, model, out.as_deref(), threads)
        }
        Cmd::Diag { run, data, split, out, model, limit } => {
            commands::cmd_diag(&run, &data, &split, &out, model, limit, threads)
        }
        Cmd::Gradcheck { scope } => commands::cmd_gradcheck(&scope, cli.seed),
        Cmd::Params { toy } => commands::cmd_params(toy),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if usage_ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
