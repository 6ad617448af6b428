mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hopqa::gradsuite::SuiteDims;

#[derive(Parser)]
#[command(
    name = "hopqa",
    version,
    about = "Multi-hop question answering: train, evaluate and inspect models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save the best checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for the checkpoint, log and config.
        #[arg(long, default_value_os_t = commands::default_out())]
        out: PathBuf,
    },
    /// Score a checkpoint on the dev split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint stem (without extension).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only the first N examples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write predictions in the official HotpotQA layout.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train and score the four layer settings on the same data and seed.
    Ablation {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export attention matrices of one example.
    Heatmap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every op and the full joint loss.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        context: usize,
        #[arg(long, default_value_t = 5)]
        question: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        sentences: usize,
        #[arg(long, default_value_t = 20)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic two-hop dataset as HotpotQA JSON.
    Synth {
        #[arg(long, short)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &ConfigArgs) -> anyhow::Result<config::RunConfig> {
    config::load(args.config.as_deref(), &args.overrides)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { cfg, out } => commands::cmd_train(&load(&cfg)?, &out)?,
        Command::Eval {
            cfg,
            checkpoint,
            limit,
        } => commands::cmd_eval(&load(&cfg)?, &checkpoint, limit)?,
        Command::Predict {
            cfg,
            checkpoint,
            output,
            limit,
        } => commands::cmd_predict(&load(&cfg)?, &checkpoint, &output, limit)?,
        Command::Ablation { cfg, out } => commands::cmd_ablation(&load(&cfg)?, out.as_deref())?,
        Command::Heatmap {
            cfg,
            checkpoint,
            id,
            out,
        } => commands::cmd_heatmap(&load(&cfg)?, &checkpoint, &id, &out)?,
        Command::Gradcheck {
            context,
            question,
            d,
            sentences,
            vocab,
            seed,
        } => {
            let dims = SuiteDims {
                context,
                question,
                d,
                sentences,
                vocab,
            };
            return commands::cmd_gradcheck(&dims, seed);
        }
        Command::Synth { n, seed, out } => commands::cmd_synth(n, seed, &out)?,
    }
    Ok(true)
}

/// The error chain joined with `: `, skipping causes whose text the
/// previous message already contains.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// 2 for usage and input problems, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<config::ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<hopqa::Error>() {
        Some(hopqa::Error::Usage(_) | hopqa::Error::Parse { .. } | hopqa::Error::Io { .. }) => 2,
        _ => 1,
    }
}

/// Exit quietly when stdout is closed early, as in `hopqa eval | head`.
#[cfg(unix)]
fn default_sigpipe() {
    // SAFETY: called before any other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn default_sigpipe() {}

fn main() -> ExitCode {
    default_sigpipe();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
