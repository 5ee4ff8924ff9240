use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orgmol_cli::commands::{
    build_vocab_cmd, evaluate_cmd, sample_cmd, train_bonds_cmd, train_diffusion_cmd, BuildVocabArgs, Common,
    EvaluateArgs, SampleArgs, TrainArgs,
};
use orgmol_cli::error::CliError;
use orgmol_core::assemble::AssemblyMode;

#[derive(Parser)]
#[command(name = "orgmol", version, about = "Fragment-based molecule generation by score-based diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// `key = value` run configuration (defaults: the hce preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed; falls back to the config file, then ORGMOL_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            threads: a.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a fragment vocabulary from a SMILES corpus.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        /// Target vocabulary size (overrides vocab_size).
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the fragment-graph score networks.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the inter-fragment bond scorer.
    TrainBonds {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Refuse to train unless this diffusion checkpoint shares the vocabulary.
        #[arg(long)]
        diffusion_ckpt: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate molecules.
    Sample {
        #[arg(long)]
        diffusion_ckpt: PathBuf,
        #[arg(long)]
        bond_ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        n: usize,
        /// Score threshold for adding a candidate bond, in [0, 1).
        #[arg(long)]
        threshold: Option<f64>,
        /// scored or random-ablation.
        #[arg(long)]
        mode: Option<AssemblyMode>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute validity, uniqueness and novelty of a generated set.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of requested samples (validity denominator).
        #[arg(long)]
        requested: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::BuildVocab { data, size, out, common } => build_vocab_cmd(&BuildVocabArgs {
            data,
            size,
            out,
            common: common.into(),
        }),
        Command::TrainDiffusion { data, vocab, out, common } => train_diffusion_cmd(&TrainArgs {
            data,
            vocab,
            out,
            diffusion_ckpt: None,
            common: common.into(),
        }),
        Command::TrainBonds {
            data,
            vocab,
            out,
            diffusion_ckpt,
            common,
        } => train_bonds_cmd(&TrainArgs {
            data,
            vocab,
            out,
            diffusion_ckpt,
            common: common.into(),
        }),
        Command::Sample {
            diffusion_ckpt,
            bond_ckpt,
            vocab,
            n,
            threshold,
            mode,
            out,
            common,
        } => sample_cmd(&SampleArgs {
            diffusion_ckpt,
            bond_ckpt,
            vocab,
            n,
            threshold,
            mode,
            out,
            common: common.into(),
        }),
        Command::Evaluate {
            generated,
            train,
            vocab,
            out,
            requested,
        } => evaluate_cmd(&EvaluateArgs {
            generated,
            train,
            vocab,
            out,
            requested,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
