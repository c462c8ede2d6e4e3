//! Command-line harness: configuration, rollouts, training, slack/basis
//! comparisons and the invariant suite. The binary is a thin wrapper over
//! [`run`].

pub mod commands;
pub mod config;
pub mod csv_out;
pub mod validate;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{LoadedConfig, PolicyChoice, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, unparsable or invalid configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// One or more properties of the invariant suite failed (exit code 1).
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] atacom::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "atacom", version, about = "Safe exploration on constraint-manifold tangent spaces")]
pub struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set experiment.episodes=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suite and print pass/fail per property.
    Validate,
    /// Run episodes and write per-episode metrics as CSV.
    Rollout {
        #[arg(long, value_enum)]
        policy: Option<PolicyChoice>,
        #[arg(long)]
        policy_file: Option<PathBuf>,
        /// Route actions through the safety controller.
        #[arg(long, value_parser = parse_switch)]
        safety: Option<bool>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a linear policy by cross-entropy search under the safety controller.
    Train {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep slack type x basis method x correction gain.
    Compare {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on/off, got '{other}'")),
    }
}

/// Executes a parsed command line, writing the human-readable report to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    let mut push = |key: &str, value: String| overrides.push(format!("{key}={value}"));
    match &cli.command {
        Command::Rollout { policy, policy_file, safety, output } => {
            if let Some(p) = policy {
                push("experiment.policy", format!("\"{}\"", policy_name(*p)));
            }
            if let Some(f) = policy_file {
                push("experiment.policy_file", toml_string(f));
            }
            if let Some(s) = safety {
                push("experiment.safety", s.to_string());
            }
            if let Some(o) = output {
                push("experiment.output", toml_string(o));
            }
        }
        Command::Train { output } | Command::Compare { output } => {
            if let Some(o) = output {
                push("experiment.output", toml_string(o));
            }
        }
        Command::Validate => {}
    }
    let loaded = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Validate => validate::cmd_validate(&loaded.config, out),
        Command::Rollout { .. } => commands::cmd_rollout(&loaded, out).map(|_| ()),
        Command::Train { .. } => commands::cmd_train(&loaded, out).map(|_| ()),
        Command::Compare { .. } => commands::cmd_compare(&loaded, out).map(|_| ()),
    }
}

fn policy_name(p: PolicyChoice) -> &'static str {
    match p {
        PolicyChoice::Random => "random",
        PolicyChoice::Zero => "zero",
        PolicyChoice::Saved => "saved",
    }
}

fn toml_string(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}
