//! `cnet` — experiment command line for constructive incremental-feature-
//! learning networks.
//!
//! Exit codes: 0 success, 2 input error (missing files, bad arguments or
//! configuration), 3 data/format error (unparseable CSV, corrupted model or
//! report files), 4 contract violation during a training stage.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use cnet::datapipe::GroupOrder;
use cnet::Error;

use commands::CliError;
use config::{ExperimentConfig, Overrides, CONFIG_ENV};

#[derive(Parser)]
#[command(
    name = "cnet",
    version,
    about = "Constructive network experiments: prepare data, train, grow, evaluate, compare",
    after_help = "Configuration comes from --config, else the file named by $CNET_CONFIG, \
                  else built-in defaults; flags override file values."
)]
struct Cli {
    /// Experiment config file (JSON); defaults to $CNET_CONFIG if set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Overrides the number of averaged runs (seeds become 0..n).
    #[arg(long, global = true)]
    n_runs: Option<usize>,

    /// Overrides the training epoch budget.
    #[arg(long, global = true)]
    max_epochs: Option<usize>,

    /// Overrides the learning rate.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Raw CSV -> deduplicated, chunked, split, normalized, SMOTE-rebalanced
    /// part files plus a preparation summary.
    Prepare,
    /// Train the fixed-topology initial model on chunk 1.
    TrainInitial,
    /// Continue training a saved model, fully unfrozen, on chunk 2.
    Refit {
        /// Model to refit; defaults to <output_dir>/initial.cnet.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Grow sub-networks over relevancy-ordered feature groups on chunk 1.
    GrowGroups {
        /// Feature group ordering: descending, ascending or none.
        #[arg(long)]
        order: Option<String>,
    },
    /// Grow a chunk-1 model onto chunk 2 and emit the four-model comparison
    /// reports (initial on both chunks, refit baseline, final grown model).
    GrowTransfer,
    /// Evaluate a saved model on a prepared dataset file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Probability at or above which a prediction counts as positive.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Report name; defaults to the model file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Compare two or more metrics reports (deltas against the first).
    Compare {
        /// Metrics report files.
        reports: Vec<PathBuf>,
    },
}

fn parse_order(text: &str) -> Result<GroupOrder, CliError> {
    match text {
        "descending" => Ok(GroupOrder::Descending),
        "ascending" => Ok(GroupOrder::Ascending),
        "none" => Ok(GroupOrder::None),
        other => Err(CliError {
            stage: "arguments".into(),
            training: false,
            source: Error::InvalidArgument(format!(
                "unknown order {other:?} (expected descending, ascending or none)"
            )),
        }),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        output_dir: cli.output_dir,
        n_runs: cli.n_runs,
        max_epochs: cli.max_epochs,
        learning_rate: cli.learning_rate,
    };
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &overrides).map_err(|source| {
        CliError { stage: format!("configuration (flags > --config > ${CONFIG_ENV} > defaults)"), training: false, source }
    })?;
    commands::echo_effective_config(&cfg)?;
    match cli.command {
        Command::Prepare => commands::cmd_prepare(&cfg),
        Command::TrainInitial => commands::cmd_train_initial(&cfg),
        Command::Refit { model } => commands::cmd_refit(&cfg, model.as_deref()),
        Command::GrowGroups { order } => {
            let order = order.as_deref().map(parse_order).transpose()?;
            commands::cmd_grow_groups(&cfg, order)
        }
        Command::GrowTransfer => commands::cmd_grow_transfer(&cfg),
        Command::Evaluate { model, data, threshold, name } => {
            commands::cmd_evaluate(&cfg, &model, &data, threshold, name.as_deref())
        }
        Command::Compare { reports } => commands::cmd_compare(&cfg, &reports),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error {e}");
        std::process::exit(e.exit_code());
    }
}
