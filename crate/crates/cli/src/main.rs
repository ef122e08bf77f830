//! `cograph`: train and inspect one-shot knowledge-graph reasoners.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numeric failure (divergence or gradient-check breach).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cograph",
    version,
    about = "One-shot knowledge-graph reasoning: generate, pretrain, train, evaluate, explain"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with planted composition rules
    Generate {
        /// Flat key=value generator spec file
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Dataset output directory
        #[arg(long)]
        out: PathBuf,
        /// Override one spec entry (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Pretrain embedding tables on the background graph
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat key=value config file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train a model and write best/final checkpoints plus a log
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Warm-start embedding tables from a pretrain checkpoint
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Worker threads; 1 gives bit-identical runs
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rank all queries of a split and write metric reports
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint directory (or its params.bin)
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train, valid, or test
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one query and render its reasoning graph as DOT
    Explain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Relation name; its dataset support pair is used unless one is given
        #[arg(long)]
        relation: String,
        #[arg(long)]
        support_head: Option<String>,
        #[arg(long)]
        support_tail: Option<String>,
        /// Query head entity name
        #[arg(long)]
        head: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn run(cli: Cli) -> cograph_core::Result<()> {
    match cli.cmd {
        Cmd::Generate { spec, out, sets } => commands::cmd_generate(spec, out, sets),
        Cmd::Pretrain {
            dataset,
            out,
            config,
            sets,
        } => commands::cmd_pretrain(dataset, out, config, sets),
        Cmd::Train {
            dataset,
            out,
            config,
            embeddings,
            sets,
            seed,
            steps,
            threads,
        } => commands::cmd_train(dataset, out, config, embeddings, sets, seed, steps, threads),
        Cmd::Evaluate {
            dataset,
            checkpoint,
            out,
            split,
            config,
            sets,
            seed,
        } => commands::cmd_evaluate(dataset, checkpoint, out, split, config, sets, seed),
        Cmd::Explain {
            dataset,
            checkpoint,
            out,
            relation,
            support_head,
            support_tail,
            head,
            seed,
            config,
            sets,
        } => commands::cmd_explain(
            dataset,
            checkpoint,
            out,
            relation,
            support_head,
            support_tail,
            head,
            seed,
            config,
            sets,
        ),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_numeric() { 3 } else { 2 });
    }
}
