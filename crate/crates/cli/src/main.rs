mod artifacts;
mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Next-action prediction over student event logs.
#[derive(Debug, Parser)]
#[command(name = "nextaction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "NEXTACTION_WORKERS")]
    pub workers: Option<usize>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where artifacts are written.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    /// Encoded corpus written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// `certified` or `uncertified`.
    #[arg(long)]
    pub cohort: Option<String>,
    /// Drop students with fewer actions.
    #[arg(long)]
    pub min_actions: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic event log, roster and syllabus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Turn an event log and roster into a corpus and vocabulary.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        /// Tokens seen fewer times are dropped.
        #[arg(long)]
        min_count: Option<u64>,
        /// Fail on the first malformed record instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Cross-validate an n-gram model.
    Ngram {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortArgs,
        #[arg(long)]
        max_order: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Also report every order from 1 to `--max-order`.
        #[arg(long)]
        sweep: bool,
        /// Fit on the whole cohort and save the table here.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Cross-validate (or grid-search) the recurrent model.
    Lstm(commands::LstmArgs),
    /// Score a structural baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortArgs,
        /// `repeat`, `syllabus` or `combined`.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        syllabus: Option<PathBuf>,
        /// Vocabulary written by `ingest`; defaults to `vocab.tsv` next to the corpus.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Apply a saved model (n-gram table or checkpoint) to a cohort.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Agreement table of two prediction streams.
    Agree {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Ingest {
            common,
            log,
            roster,
            min_count,
            strict,
        } => commands::ingest(&common, &log, &roster, min_count, strict),
        Command::Ngram {
            common,
            data,
            max_order,
            folds,
            sweep,
            save_model,
        } => commands::ngram(&common, &data, max_order, folds, sweep, save_model.as_deref()),
        Command::Lstm(args) => commands::lstm(&args),
        Command::Baseline {
            common,
            data,
            kind,
            syllabus,
            vocab,
            folds,
        } => commands::baseline(&common, &data, &kind, syllabus.as_deref(), vocab.as_deref(), folds),
        Command::Eval { common, data, model } => commands::eval(&common, &data, &model),
        Command::Agree { common, a, b } => commands::agree(&common, &a, &b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
