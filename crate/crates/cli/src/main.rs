use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nerqa_cli::commands;
use nerqa_cli::config::{self, ConfigFile, Overrides};
use nerqa_cli::parse_named;
use nerqa_core::consensus::VoteMode;
use nerqa_core::gateway::BackendKind;
use nerqa_core::http::UreqTransport;
use nerqa_core::prompt::PromptMode;
use nerqa_core::syntax::{FetchOptions, SyntaxKind};
use nerqa_core::transcript::ScLevel;

#[derive(Parser)]
#[command(
    name = "nerqa",
    version,
    about = "Zero-shot NER experiments with chat models"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "nerqa.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Subset sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluate on a random subset of this many sentences.
    #[arg(long, global = true)]
    subset_n: Option<usize>,
    /// live, replay or mock.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query the model for every sentence and record transcripts.
    Run {
        /// vanilla or decomposed.
        #[arg(long, value_parser = parse_named::<PromptMode>)]
        mode: Option<PromptMode>,
        /// off, question_level or sample_level.
        #[arg(long, value_parser = parse_named::<ScLevel>)]
        sc: Option<ScLevel>,
        #[arg(long)]
        sc_n: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Turn stored transcripts into predictions.
    Vote {
        /// Voting level; defaults to the level each sentence was run with.
        #[arg(long, value_parser = parse_named::<ScLevel>)]
        level: Option<ScLevel>,
        /// surface_then_label or exact_pair.
        #[arg(long, value_parser = parse_named::<VoteMode>, default_value = "surface_then_label")]
        vote_mode: VoteMode,
        /// Defaults to the configured run directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Score predictions against gold.
    Eval {
        /// One file per seed; defaults to the run's predictions.jsonl.
        #[arg(long, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify prediction errors.
    Errors {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask the model for a label order.
    Order {
        /// Comma-separated; defaults to the configured label set.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Defaults to dataset.label_order.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch syntactic annotations from a parser service.
    Annotate {
        #[arg(long)]
        endpoint: String,
        /// Comma-separated, e.g. pos,dep.
        #[arg(long, value_delimiter = ',', value_parser = parse_named::<SyntaxKind>, required = true)]
        kinds: Vec<SyntaxKind>,
        /// Defaults to prompt.annotations.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long, default_value_t = 120)]
        timeout_s: u64,
    },
}

fn load(cli: &Cli, extra: Overrides) -> Result<ConfigFile> {
    let o = Overrides {
        run_id: cli.run_id.clone(),
        seed: cli.seed,
        subset_n: cli.subset_n,
        backend: cli.backend,
        ..extra
    };
    config::load(&cli.config, &o)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Run {
            mode,
            sc,
            sc_n,
            workers,
        } => {
            let c = load(
                cli,
                Overrides {
                    mode: *mode,
                    sc: *sc,
                    sc_n: *sc_n,
                    workers: *workers,
                    ..Default::default()
                },
            )?;
            commands::cmd_run(&c)
        }
        Command::Vote {
            level,
            vote_mode,
            run_dir,
        } => {
            let dir = match run_dir {
                Some(d) => d.clone(),
                None => load(cli, Overrides::default())?.run_dir()?,
            };
            commands::cmd_vote(&dir, *level, *vote_mode)
        }
        Command::Eval { predictions, out } => {
            let c = load(cli, Overrides::default())?;
            let preds = if predictions.is_empty() {
                vec![c.run_dir()?.join("predictions.jsonl")]
            } else {
                predictions.clone()
            };
            let out = match out {
                Some(o) => o.clone(),
                None => c.run_dir()?,
            };
            commands::cmd_eval(&c, &preds, &out)
        }
        Command::Errors { predictions, out } => {
            let c = load(cli, Overrides::default())?;
            let pred = match predictions {
                Some(p) => p.clone(),
                None => c.run_dir()?.join("predictions.jsonl"),
            };
            let out = match out {
                Some(o) => o.clone(),
                None => c.run_dir()?,
            };
            commands::cmd_errors(&c, &pred, &out)
        }
        Command::Order { labels, out } => {
            let c = load(cli, Overrides::default())?;
            let labels = if labels.is_empty() {
                c.dataset
                    .label_set
                    .clone()
                    .context("no labels: pass --labels or set dataset.label_set")?
            } else {
                labels.iter().map(|l| l.trim().to_string()).collect()
            };
            let out = out
                .clone()
                .or_else(|| c.dataset.label_order.clone())
                .context("no output path: pass --out or set dataset.label_order")?;
            commands::cmd_order(&c, labels, &out)
        }
        Command::Annotate {
            endpoint,
            kinds,
            out,
            batch_size,
            parallelism,
            timeout_s,
        } => {
            let c = load(cli, Overrides::default())?;
            let out = out
                .clone()
                .or_else(|| c.prompt.annotations.clone())
                .context("no output path: pass --out or set prompt.annotations")?;
            let opts = FetchOptions {
                batch_size: *batch_size,
                parallelism: *parallelism,
                timeout: Duration::from_secs(*timeout_s),
            };
            let transport = Arc::new(UreqTransport::default());
            commands::cmd_annotate(&c, endpoint, kinds, &out, &opts, transport.as_ref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
