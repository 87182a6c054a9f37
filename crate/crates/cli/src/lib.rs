//! Command-line front end for the retrieval, answering and evaluation
//! pipeline. [`run`] parses arguments, applies flag overrides to the JSON
//! configuration and maps failures to exit codes.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};
use crate::pipeline::Context;

#[derive(Debug, Parser)]
#[command(name = "regrank", version, about = "Regulatory passage retrieval, answering and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the lexical index and stage embedding matrices.
    Index,
    /// Run first-stage retrieval, fusion and optional reranking.
    Retrieve,
    /// Build answers from the retrieved passages.
    Answer,
    /// Score retrieval, the retriever ablation and the answers.
    Evaluate,
    /// Mine triplets for iterative dense-encoder fine-tuning.
    Mine,
    /// Build the reranker training set.
    Trainset,
    /// Serve the stub models over the line protocol on stdin/stdout.
    ServeStub,
}

/// Flags win over the configuration file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus file; repeat for several.
    #[arg(long, global = true)]
    pub corpus: Vec<PathBuf>,
    /// Training questions, used by q2q, mining and the reranker training set
    #[arg(long, global = true)]
    pub train: Option<PathBuf>,
    /// Questions to retrieve, answer and evaluate
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    /// Comma-separated retriever ids: bm25, dense:<profile>, q2q:<profile>.
    #[arg(long, global = true, value_delimiter = ',')]
    pub retrievers: Option<Vec<String>>,
    /// Rank offset in reciprocal rank fusion
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Candidates kept per first-stage retriever
    #[arg(long = "l1-depth", global = true)]
    pub l1_depth: Option<usize>,
    /// Fused candidates passed to the reranker
    #[arg(long = "l2-depth", global = true)]
    pub l2_depth: Option<usize>,
    /// Passages kept per question after the last stage
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// llm_prompt, passage_concat or single_line.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// stub, spawn:<command line> or unix:<socket path>.
    #[arg(long, global = true)]
    pub transport: Option<String>,
    /// Seed for sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Rebuild an existing index.
    #[arg(long, global = true)]
    pub force: bool,
    /// Skip second-stage reranking.
    #[arg(long = "no-l2", global = true)]
    pub no_l2: bool,
    /// Comma-separated metric cutoffs.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Context sentences per scoring window.
    #[arg(long = "window-n", global = true)]
    pub window_n: Option<usize>,
    /// Also write the entailment histogram
    #[arg(long, global = true)]
    pub histogram: bool,
    /// Also grade the answers with the judge model
    #[arg(long, global = true)]
    pub judge: bool,
    /// Mine without calling the trainer.
    #[arg(long = "dry-run", global = true)]
    pub dry_run: bool,
}

impl Overrides {
    pub fn apply(&self, mut c: PipelineConfig) -> PipelineConfig {
        if !self.corpus.is_empty() {
            c.corpus = self.corpus.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                }
            )*};
        }
        set!(train, test, retrievers, beta, l1_depth, l2_depth, k, strategy, transport, seed, out, ks, window_n);
        if self.no_l2 {
            c.l2 = false;
        }
        c.histogram |= self.histogram;
        c.judge |= self.judge;
        c
    }

    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let base = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        Ok(self.apply(base))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Command::ServeStub = cli.command {
        let stdin = std::io::stdin();
        regrank::gateway::serve_stub(stdin.lock(), std::io::stdout().lock())?;
        return Ok(());
    }
    let mut ctx = Context::new(cli.flags.resolve()?);
    ctx.force = cli.flags.force;
    ctx.dry_run = cli.flags.dry_run;
    match cli.command {
        Command::Index => pipeline::cmd_index(ctx),
        Command::Retrieve => pipeline::cmd_retrieve(ctx),
        Command::Answer => pipeline::cmd_answer(ctx),
        Command::Evaluate => pipeline::cmd_evaluate(ctx),
        Command::Mine => pipeline::cmd_mine(ctx),
        Command::Trainset => pipeline::cmd_trainset(ctx),
        Command::ServeStub => unreachable!("handled above"),
    }
}

/// Runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
