//! `quadpref` command-line pipeline.
//!
//! Exit codes: 0 success, 1 validation failures present, 2 I/O or config error.

mod commands;
mod config;
mod lossrows;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, GenArgs, IngestArgs, LossCheckArgs, RenderArgs, Status};
use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "quadpref",
    version,
    about = "Sentiment quad corpus tooling and preference-data generation"
)]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, validate it and write canonical JSONL. Stats go to stderr.
    Ingest {
        /// Dataset file (defaults to paths.dataset).
        #[arg(long)]
        input: Option<PathBuf>,
        /// jsonl, legacy or acos.
        #[arg(long)]
        format: Option<String>,
        /// Category list, one per line. Without it labels are taken as found.
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Skip malformed records with a warning instead of failing.
        #[arg(long)]
        lenient: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build listwise preference samples with confusable negatives.
    GenCandidates {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        /// Bracketed parse trees, one per sentence.
        #[arg(long)]
        parses: Option<PathBuf>,
        /// Phrase embedding table.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Negatives per sample.
        #[arg(long)]
        n: Option<usize>,
        /// Fail when any example cannot be composed instead of skipping it.
        #[arg(long)]
        strict: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Render gold quads as target strings, one per line.
    Render {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        /// Use the bracketed marker style instead of the rationale template.
        #[arg(long)]
        marker: bool,
        /// Emit JSONL records with the prompt and target.
        #[arg(long)]
        prompts: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Score line-aligned predictions against a gold dataset.
    Eval {
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        /// One model output per gold example.
        #[arg(long)]
        predictions: PathBuf,
        /// Compare bytes instead of lowercased, whitespace-collapsed strings.
        #[arg(long)]
        strict_match: bool,
        /// Predictions use the marker style.
        #[arg(long)]
        marker: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Evaluate losses on JSONL batch rows and verify gradients numerically.
    LossCheck {
        #[arg(long)]
        input: PathBuf,
        /// Loss for rows without a "kind" field: ce, dpo, listwise or hybrid.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Maximum relative gradient error for PASS.
        #[arg(long, default_value_t = quadpref::prefloss::DEFAULT_FD_TOLERANCE)]
        tolerance: f64,
        /// Divide log-probabilities by each row's "lengths" before evaluating.
        #[arg(long)]
        length_normalize: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            input,
            format,
            categories,
            lenient,
            output,
        } => commands::ingest(
            &cfg,
            IngestArgs {
                input,
                format,
                categories,
                lenient,
                output,
            },
        ),
        Command::GenCandidates {
            dataset,
            format,
            parses,
            embeddings,
            categories,
            seed,
            n,
            strict,
            output,
        } => commands::gen_candidates(
            &cfg,
            GenArgs {
                dataset,
                format,
                parses,
                embeddings,
                categories,
                seed,
                n,
                strict,
                output,
            },
        ),
        Command::Render {
            dataset,
            format,
            marker,
            prompts,
            output,
        } => commands::render_cmd(
            &cfg,
            RenderArgs {
                dataset,
                format,
                marker,
                prompts,
                output,
            },
        ),
        Command::Eval {
            gold,
            format,
            predictions,
            strict_match,
            marker,
            output,
        } => commands::eval_cmd(
            &cfg,
            EvalArgs {
                gold,
                format,
                predictions,
                strict_match,
                marker,
                output,
            },
        ),
        Command::LossCheck {
            input,
            kind,
            beta,
            lambda,
            tolerance,
            length_normalize,
            output,
        } => commands::loss_check(
            &cfg,
            LossCheckArgs {
                input,
                kind,
                beta,
                lambda,
                tolerance,
                length_normalize,
                output,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::ValidationFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
