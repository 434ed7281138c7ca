//! `cbe` — drives the context-based-embedding pipeline from a flat config
//! file: corpus ingestion through entity linking, graph walks, embedding
//! training, fusion, and the full model × input × task evaluation matrix.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cbe_cli::config::PipelineConfig;
use cbe_cli::stages::{self, Ctx};
use cbe_cli::{cells, escape_message, CliError};
use cbe_core::corpus::Task;

#[derive(Parser)]
#[command(name = "cbe", version, about = "Context-based embedding pipeline")]
struct Cli {
    /// Config file of flat `key = value` lines with dotted prefixes.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set walk.max_depth=3. Wins over
    /// environment variables, which win over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Force single-threaded execution everywhere for bit-reproducibility.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Allow the linker to call the configured remote annotator.
    #[arg(long, global = true)]
    remote_linker: bool,

    /// Where artifacts go; wins over paths.output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Selects one experiment cell.
#[derive(Args)]
struct CellArgs {
    /// Model family: logreg, mlp, or knn.
    #[arg(long)]
    model: String,
    /// Feature input: text, kge, or cbe.
    #[arg(long)]
    input: String,
    /// Task column: ed1, ed2, ed3, or ed4.
    #[arg(long)]
    task: String,
}

impl CellArgs {
    fn task(&self) -> Result<Task, CliError> {
        Task::from_str(&self.task)
            .map_err(|e| CliError::Config(format!("--task {}: {e}", self.task)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus file and stamp its normalized form.
    Ingest,
    /// Corpus diagnostics: emoji usage and label balance per task.
    Analyze,
    /// Recognize, merge, and curate entity mentions.
    Link,
    /// Generate random walks from every linked entity.
    Walk,
    /// Train (or pass through) the text-side vectors.
    EmbedText,
    /// Train graph-node embeddings on the walk corpus.
    EmbedKg,
    /// Build the text, graph, and fused per-post feature tables.
    Fuse,
    /// Grid-search and fit one cell's model; store it reloadably.
    Train(CellArgs),
    /// Score one cell's stored model on the held-out split.
    Evaluate(CellArgs),
    /// Run the label-leakage diagnostic for one cell.
    BiasCheck(CellArgs),
    /// Sweep all model × input × task cells into one results table.
    Matrix,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.sets, cli.output_dir.as_deref())?;
    let ctx = Ctx::new(cfg, cli.deterministic, cli.remote_linker);
    match cli.command {
        Command::Ingest => {
            stages::ensure_ingest(&ctx)?;
        }
        Command::Analyze => {
            stages::ensure_analyze(&ctx)?;
        }
        Command::Link => {
            stages::ensure_link(&ctx)?;
        }
        Command::Walk => {
            stages::ensure_walk(&ctx)?;
        }
        Command::EmbedText => {
            stages::ensure_embed_text(&ctx)?;
        }
        Command::EmbedKg => {
            stages::ensure_embed_kg(&ctx)?;
        }
        Command::Fuse => {
            stages::ensure_fuse(&ctx)?;
        }
        Command::Train(args) => {
            cells::ensure_train(&ctx, &args.model, &args.input, args.task()?)?;
        }
        Command::Evaluate(args) => {
            cells::ensure_evaluate(&ctx, &args.model, &args.input, args.task()?)?;
        }
        Command::BiasCheck(args) => {
            cells::ensure_bias_check(&ctx, &args.model, &args.input, args.task()?)?;
        }
        Command::Matrix => {
            cells::ensure_matrix(&ctx)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error\t{}\t{}", e.kind(), escape_message(&e.to_string()));
        std::process::exit(1);
    }
}
