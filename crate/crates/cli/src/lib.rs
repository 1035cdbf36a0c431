//! Command-line front end: reads a run config, runs one computation and
//! writes CSV artifacts plus a `manifest.toml` into the output directory.
//!
//! Exit codes: 0 success, 2 config or input-schema error, 3 numerical
//! failure, 4 when fewer than 80% of sweep points succeed, 1 for I/O errors.
//!
//! The environment variable `SPINTORQUE_SEED` overrides `sim.seed`, taking
//! precedence over both the config file and `--set`.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use spintorque::config::{parse_overrides, Config, ConfigError};
use spintorque::io::IoError;

pub use output::{sha256_hex, write_atomic, MANIFEST};

pub const SEED_ENV: &str = "SPINTORQUE_SEED";
/// Minimum fraction of successful sweep points for a zero exit status.
pub const SWEEP_SUCCESS_FRACTION: f64 = 0.8;

#[derive(Debug, Parser)]
#[command(name = "spintorque", version, about = "Spin-torque libration simulator")]
pub struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads for ensembles and sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (TOML). Without it the built-in defaults are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a config key, e.g. `--set drive.detuning_mhz=-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Detuning,
    Rabi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Psd,
    Ringdown,
    Histogram,
    Temperature,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory or an ensemble.
    Simulate(Common),
    /// Linear-response sweep over detuning or Rabi frequency.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept axis; overrides `sweep.axis`.
        #[arg(long, value_enum)]
        axis: Option<Axis>,
    },
    /// Analyze trajectory CSVs written by `simulate`.
    Analyze {
        /// Trajectory CSV; repeat for ensembles.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        #[arg(long)]
        out: PathBuf,
        /// Override keys of the embedded config, e.g. `analysis.two_modes=true`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Steady-state roots over a detuning grid.
    Bistability(Common),
    /// Noise-free up/down detuning sweep.
    Hysteresis(Common),
    /// Effective potential and Kramers rates at the configured drive.
    Potential(Common),
    /// Lasing threshold versus 1/T1.
    Threshold(Common),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(IoError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("only {ok} of {total} points succeeded")]
    Partial { ok: usize, total: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(e) => CliError::Io(e),
            IoError::Config(e) => CliError::Config(e),
            other => CliError::Input(other),
        }
    }
}

/// Config plus the override bookkeeping recorded in the manifest.
#[derive(Debug)]
pub struct Loaded {
    pub config: Config,
    pub overrides: Vec<String>,
    pub seed_source: &'static str,
}

/// Parses `text` with `--set` overrides and the seed variable applied.
pub fn load_config(text: &str, set: &[String], seed_env: Option<String>) -> Result<Loaded, CliError> {
    let mut pairs = parse_overrides(set)?;
    let mut overrides = set.to_vec();
    let seed_source = match seed_env {
        Some(seed) => {
            pairs.push(("sim.seed".into(), seed.clone()));
            overrides.push(format!("{SEED_ENV}={seed}"));
            "env"
        }
        None if set.iter().any(|s| s.trim_start().starts_with("sim.seed")) => "override",
        None => "config",
    };
    let config = Config::parse(text, &pairs)?;
    Ok(Loaded { config, overrides, seed_source })
}

fn read_text(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() }.into())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let seed_env = std::env::var(SEED_ENV).ok();
    let load = |c: &Common| -> Result<Loaded, CliError> {
        let text = match &c.config {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        load_config(&text, &c.set, seed_env.clone())
    };
    match cli.command {
        Command::Simulate(c) => commands::simulate(&load(&c)?, &c.out),
        Command::Sweep { common, axis } => {
            let mut common = common;
            if let Some(a) = axis {
                let name = if a == Axis::Rabi { "rabi" } else { "detuning" };
                common.set.push(format!("sweep.axis=\"{name}\""));
            }
            commands::sweep(&load(&common)?, &common.out)
        }
        Command::Analyze { inputs, mode, out, set } => commands::analyze(&inputs, mode, &out, &set),
        Command::Bistability(c) => commands::bistability(&load(&c)?, &c.out),
        Command::Hysteresis(c) => commands::hysteresis(&load(&c)?, &c.out),
        Command::Potential(c) => commands::potential(&load(&c)?, &c.out),
        Command::Threshold(c) => commands::threshold(&load(&c)?, &c.out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_env_wins() {
        let l = load_config("sim.seed = 3", &["sim.seed=4".into()], Some("9".into())).unwrap();
        assert_eq!(l.config.params.sim().seed, 9);
        assert_eq!(l.seed_source, "env");
        assert!(l.overrides.contains(&"SPINTORQUE_SEED=9".to_string()));
        let l = load_config("sim.seed = 3", &["sim.seed=4".into()], None).unwrap();
        assert_eq!(l.config.params.sim().seed, 4);
        assert_eq!(l.seed_source, "override");
    }

    #[test]
    fn exit_codes() {
        let e = load_config("bogus = 1", &[], None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(CliError::Partial { ok: 1, total: 2 }.exit_code(), 4);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["spintorque", "--threads", "2", "sweep", "--out", "o", "--axis", "rabi", "--set", "sweep.n=3"]).unwrap();
        assert_eq!(cli.threads, Some(2));
        assert!(matches!(cli.command, Command::Sweep { axis: Some(Axis::Rabi), .. }));
    }
}
