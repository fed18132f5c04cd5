use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

mod commands;
mod config;
mod output;

/// Specific Wasserstein divergences and optimal win-martingales.
#[derive(Debug, Parser)]
#[command(name = "specwass", version)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's "seed".
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (SPECWASS_OUT takes precedence).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Scaled D^{N,p} against its limit for a list of N.
    Converge,
    /// Solve the optimal profile for one exponent.
    Optimal,
    /// Simulate and persist a path ensemble.
    Simulate,
    /// Optimality, value, convex-order and entropy-chain checks.
    Verify,
    /// Logit density, bridge limit and entropy-gap checks.
    Schrodinger,
    /// Bernoulli-drift filtering experiment.
    Filter,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Converge => "converge",
            Self::Optimal => "optimal",
            Self::Simulate => "simulate",
            Self::Verify => "verify",
            Self::Schrodinger => "schrodinger",
            Self::Filter => "filter",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Converge, Self::Optimal, Self::Simulate, Self::Verify, Self::Schrodinger, Self::Filter]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    /// Checks that ran and failed.
    Failed(Vec<String>),
}

impl From<specwass::Error> for CliError {
    fn from(e: specwass::Error) -> Self {
        use specwass::Error as E;
        match e {
            E::Domain(_) | E::Unsupported(_) | E::Format(_) | E::Json(_) => CliError::Config(e.to_string()),
            E::Numeric { .. } | E::Inconsistent(_) | E::Io(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numeric(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numeric(format!("json: {e}"))
    }
}

pub struct Context {
    pub seed: u64,
    pub workers: usize,
    pub out: output::OutDir,
}

fn load(cli: &Cli) -> Result<(Command, Value, Context), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let in_file = match value.get("command") {
        Some(Value::String(s)) => Some(Command::parse(s).ok_or_else(|| CliError::Config(format!("field `command`: unknown command '{s}'")))?),
        Some(_) => return Err(CliError::Config("field `command` must be a string".into())),
        None => None,
    };
    let command = match (cli.command, in_file) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!("subcommand '{}' does not match config command '{}'", a.name(), b.name())))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(CliError::Config("missing field `command` (or give a subcommand)".into())),
    };
    let seed = match (cli.seed, value.get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.as_u64().ok_or_else(|| CliError::Config("field `seed` must be an unsigned integer".into()))?,
        (None, None) => 1,
    };
    let workers = match (cli.workers, value.get("workers")) {
        (Some(w), _) => w,
        (None, Some(v)) => v.as_u64().ok_or_else(|| CliError::Config("field `workers` must be an unsigned integer".into()))? as usize,
        (None, None) => 1,
    };
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let out = match std::env::var_os("SPECWASS_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    };
    Ok((command, value, Context { seed, workers, out: output::OutDir::new(out) }))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (command, value, ctx) = load(cli)?;
    let started = output::unix_now();
    let result = match command {
        Command::Converge => commands::converge(parse(value)?, &ctx),
        Command::Optimal => commands::optimal(parse(value)?, &ctx),
        Command::Simulate => commands::simulate(parse(value)?, &ctx),
        Command::Verify => commands::verify(parse(value)?, &ctx),
        Command::Schrodinger => commands::schrodinger(parse(value)?, &ctx),
        Command::Filter => commands::filter(parse(value)?, &ctx),
    };
    let status = match &result {
        Ok(()) => "pass",
        Err(CliError::Failed(_)) => "fail",
        Err(_) => "error",
    };
    // Timestamps and the worker count live here, never in the reports.
    ctx.out.write_meta(command.name(), ctx.seed, ctx.workers, started, status)?;
    result
}

fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(list)) => {
            println!("{}", serde_json::json!({ "status": "fail", "failures": list }));
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numeric error: {msg}");
            ExitCode::from(3)
        }
    }
}
