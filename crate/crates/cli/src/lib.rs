//! The `chlorolab` pipeline: simulate, fit, label, train, eval and report.
//!
//! Every stage writes below `<out>/<stage>/<name>-<hash>/`, where the hash
//! covers the configuration and the digests of the stage inputs. A stage
//! looks its upstream up by recomputing that hash, so artifacts produced
//! under a different configuration are never picked up.

pub mod config;
pub mod stages;

mod commands;

use std::path::PathBuf;

use chlorolab_core::nn::NetKind;
use chlorolab_core::ModelTag;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use config::{Paths, RunConfig};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_LABEL: i32 = 4;
pub const EXIT_TRAIN: i32 = 5;
pub const EXIT_EVAL: i32 = 6;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "chlorolab", version, about = "Weak CF labeling and neural regression pipeline")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic bundle under `<out>/synth`.
    Simulate,
    /// Fit a generative model per leave-one-field-out fold.
    Fit { model: ModelTag },
    /// Weak-label every test-field tile with its fold's model.
    Label {
        #[arg(long)]
        labeler: Option<ModelTag>,
    },
    /// Train a network per fold and size on the weak labels.
    Train {
        kind: NetKind,
        #[arg(long)]
        labeler: Option<ModelTag>,
    },
    /// Score generative models or trained networks against ground truth.
    Eval {
        target: EvalTarget,
        #[arg(long)]
        labeler: Option<ModelTag>,
    },
    /// Write tables, summary, figures and manifest under `<out>/report`.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTarget {
    Generative,
    Neural,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit { .. } => "fit",
            Command::Label { .. } => "label",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Report => "report",
        }
    }

    fn labeler(&self) -> Option<ModelTag> {
        match self {
            Command::Label { labeler } | Command::Train { labeler, .. } | Command::Eval { labeler, .. } => *labeler,
            _ => None,
        }
    }
}

/// Runs one command and returns its exit code and one-line summary.
pub fn execute(cli: &Cli) -> (i32, Value) {
    let name = cli.command.name();
    let result = resolve_config(cli).and_then(|cfg| match &cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit { model } => commands::fit(&cfg, *model),
        Command::Label { .. } => commands::label(&cfg),
        Command::Train { kind, .. } => commands::train(&cfg, *kind),
        Command::Eval {
            target: EvalTarget::Generative,
            ..
        } => commands::eval_generative(&cfg),
        Command::Eval {
            target: EvalTarget::Neural,
            ..
        } => commands::eval_neural(&cfg),
        Command::Report => commands::report(&cfg),
    });
    match result {
        Ok(mut summary) => {
            let mut line = json!({"command": name, "status": "ok"});
            if let (Some(l), Some(s)) = (line.as_object_mut(), summary.as_object_mut()) {
                l.append(s);
            }
            (0, line)
        }
        Err(e) => (
            e.code,
            json!({"command": name, "status": "error", "exit_code": e.code, "error": e.message}),
        ),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(l) = cli.command.labeler() {
        cfg.labeler = l;
    }
    cfg.resolve(cli.seed, cli.out.clone())
}
