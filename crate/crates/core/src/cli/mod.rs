//! Command-line front end: `drgt <command> [--config run.toml] [--set key=value ...]`.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dataset::DataError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::interpret::InterpretError;
use crate::model::ModelError;
use crate::pubmed::PubmedError;
use crate::table::TableError;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Unavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Unavailable(_) => 3,
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Checkpoint(_) | ModelError::Io(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Graph(g) => g.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<InterpretError> for CliError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::Model(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PubmedError> for CliError {
    fn from(e: PubmedError) -> Self {
        match e {
            PubmedError::Protocol(_) => CliError::Unavailable(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "drgt",
    version,
    about = "Drug-cell-gene graph transformer for drug response"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `classification` or `regression`.
    #[arg(long, global = true)]
    pub task: Option<String>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align and filter the inputs and write dataset statistics.
    Preprocess,
    /// Train one model with a validation holdout and save the checkpoint.
    Train,
    /// Cross-validate under one of the split protocols.
    Evaluate {
        /// 1 = random masking, 2 = leave-one-out, 3 = zero-shot transfer.
        #[arg(long)]
        test: Option<u8>,
        /// `drug` or `cell`, for test 2.
        #[arg(long)]
        leave: Option<String>,
    },
    /// Extract attention, run enrichment and literature checks.
    Explain {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the local literature fixture instead of the live service.
        #[arg(long)]
        offline: bool,
    },
    /// Random hyperparameter search on the validation holdout.
    Tune {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Compute Morgan fingerprints from a SMILES table.
    Fingerprint {
        #[arg(long)]
        smiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[arg(long, default_value_t = 2048)]
        nbits: usize,
    },
    /// Write a synthetic dataset with planted structure plus a run.toml.
    Synth {
        #[arg(long)]
        drugs: Option<usize>,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        genes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn overrides(cli: &Cli) -> Vec<String> {
    let g = &cli.global;
    let mut o = Vec::new();
    if let Some(p) = &g.output {
        o.push(format!("output={}", toml_str(&p.to_string_lossy())));
    }
    if let Some(s) = g.seed {
        o.push(format!("seed={s}"));
    }
    if let Some(t) = &g.task {
        o.push(format!("task={}", toml_str(t)));
    }
    match &cli.command {
        Command::Evaluate { test, leave } => {
            if let Some(t) = test {
                o.push(format!("evaluate.test={t}"));
            }
            if let Some(l) = leave {
                o.push(format!("evaluate.leave={}", toml_str(l)));
            }
        }
        Command::Explain {
            checkpoint,
            offline,
        } => {
            if let Some(c) = checkpoint {
                o.push(format!(
                    "explain.checkpoint={}",
                    toml_str(&c.to_string_lossy())
                ));
            }
            if *offline {
                o.push("pubmed.mode=\"offline\"".into());
            }
        }
        Command::Tune { budget: Some(b) } => o.push(format!("tune.budget={b}")),
        Command::Synth {
            drugs,
            cells,
            genes,
            noise,
        } => {
            if let Some(v) = drugs {
                o.push(format!("synth.n_drugs={v}"));
            }
            if let Some(v) = cells {
                o.push(format!("synth.n_cells={v}"));
            }
            if let Some(v) = genes {
                o.push(format!("synth.n_genes={v}"));
            }
            if let Some(v) = noise {
                o.push(format!("synth.noise={v:?}"));
            }
        }
        _ => {}
    }
    o.extend(g.overrides.iter().cloned());
    o
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Fingerprint {
        smiles,
        out,
        radius,
        nbits,
    } = &cli.command
    {
        if *nbits == 0 {
            return Err(CliError::Validation("--nbits must be positive".into()));
        }
        return commands::fingerprint(smiles, out, *radius, *nbits);
    }
    let cfg = RunConfig::load(cli.global.config.as_deref(), &overrides(cli))?;
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.output.display())))?;
    match &cli.command {
        Command::Preprocess => commands::preprocess(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Tune { .. } => commands::tune(&cfg),
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Explain { .. } => {
            if commands::explain(&cfg)? {
                Ok(())
            } else {
                Err(CliError::Unavailable(
                    "some literature queries could not be answered; see support.tsv".into(),
                ))
            }
        }
        Command::Fingerprint { .. } => unreachable!(),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    main_from(std::env::args_os())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
