//! Command-line front end: reads a TOML run configuration, runs one command
//! inside a fixed-size rayon pool, and writes CSV artifacts plus a
//! `manifest.toml` describing the run into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod problem;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Outcome};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "periodic-adjoint", version, about = "Periodic shooting, adjoint gradients and optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long, env = "PA_OUT")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "PA_WORKERS", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the periodic orbit with the configured method.
    SolvePeriodic(Common),
    /// Periodic solve followed by one periodic dual solve per quantity.
    Adjoint(Common),
    /// Manifold gradients of every quantity.
    Gradient(Common),
    /// Adjoint gradients against central finite differences.
    GradCheck(Common),
    /// Leading monodromy eigenvalues and orbit stability.
    Floquet(Common),
    /// Constrained optimization over the parameters.
    Optimize(Common),
    /// Solver comparison over methods and tolerances.
    Sweep(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common, fn(&Context) -> Result<Outcome, CliError>) {
        match self {
            Command::SolvePeriodic(c) => ("solve-periodic", c, commands::solve_periodic),
            Command::Adjoint(c) => ("adjoint", c, commands::adjoint),
            Command::Gradient(c) => ("gradient", c, commands::gradient),
            Command::GradCheck(c) => ("grad-check", c, commands::grad_check_cmd),
            Command::Floquet(c) => ("floquet", c, commands::floquet),
            Command::Optimize(c) => ("optimize", c, commands::optimize_cmd),
            Command::Sweep(c) => ("sweep", c, commands::sweep),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on numerical failure or
/// non-convergence, 2 on bad flags or configuration.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, common, command) = cli.command.parts();
    let mut config = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    config.out = Some(out.clone());
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return 1;
    }
    let workers = common.workers as usize;
    let ctx = Context {
        seed: config.seed,
        config,
        out,
    };

    let start = Instant::now();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Output(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| command(&ctx)));
    let total = start.elapsed().as_secs_f64();

    let (code, message, mut timings) = match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            let code = if outcome.success { 0 } else { 1 };
            let message = if outcome.success { "ok" } else { "not converged" };
            (code, message.to_string(), outcome.timings)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), e.to_string(), Vec::new())
        }
    };
    timings.push(("total".into(), total));
    if let Err(e) = write_manifest(&ctx, name, workers, code, &message, &timings) {
        eprintln!("error: {e}");
        return code.max(1);
    }
    code
}

fn write_manifest(
    ctx: &Context,
    command: &str,
    workers: usize,
    code: i32,
    message: &str,
    timings: &[(String, f64)],
) -> Result<(), CliError> {
    let mut table = toml::Table::new();
    table.insert("command".into(), command.into());
    table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    table.insert("core_version".into(), periodic_adjoint::VERSION.into());
    table.insert("workers".into(), (workers as i64).into());
    table.insert("seed".into(), (ctx.seed as i64).into());
    table.insert("exit_code".into(), i64::from(code).into());
    table.insert("status".into(), message.into());
    let times: toml::Table = timings.iter().map(|(k, v)| (k.clone(), toml::Value::Float(*v))).collect();
    table.insert("timings".into(), times.into());
    let config = toml::Value::try_from(&ctx.config).map_err(|e| CliError::Output(e.to_string()))?;
    table.insert("config".into(), config);
    let text = toml::to_string(&table).map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::write(ctx.out.join("manifest.toml"), text)?;
    Ok(())
}

/// Reads the configuration echoed in a `manifest.toml`.
pub fn manifest_config(text: &str) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let config = table
        .remove("config")
        .ok_or_else(|| CliError::Config("manifest has no [config] table".into()))?;
    config.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}
