//! Batch front end for the simulation engine: model validation, runs,
//! parameter sweeps, lesion studies, FC analysis, co-simulation, and
//! connectome inspection. Every command is deterministic given its inputs
//! and flags; all randomness flows from seeds recorded in the outputs.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numeric fault,
//! 4 I/O error.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

pub fn map_connectome_err(e: neuroloom_core::connectome::ConnectomeError) -> CliError {
    use neuroloom_core::connectome::ConnectomeError as E;
    match &e {
        // A referenced file that does not exist is a configuration
        // mistake; exit 4 is reserved for genuine I/O failures.
        E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            CliError::Config(e.to_string())
        }
        E::Io { .. } | E::Zip { .. } => CliError::Io(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

/// Read-path error helper: missing files are config errors (exit 2),
/// everything else is I/O (exit 4).
pub fn read_file_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Config(msg)
    } else {
        CliError::Io(msg)
    }
}

pub fn map_engine_err(e: neuroloom_core::engine::EngineError) -> CliError {
    use neuroloom_core::engine::EngineError as E;
    match e {
        E::NumericFault { .. } => CliError::Numeric(e.to_string()),
        E::Connectome(inner) => map_connectome_err(inner),
        other => CliError::Config(other.to_string()),
    }
}

pub fn map_observable_err(e: neuroloom_core::observables::ObservableError) -> CliError {
    use neuroloom_core::observables::ObservableError as E;
    match e {
        E::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub fn map_cosim_err(e: neuroloom_core::cosim::CosimError) -> CliError {
    use neuroloom_core::cosim::CosimError as E;
    match e {
        E::Transport(_) => CliError::Io(e.to_string()),
        E::Engine(inner) => map_engine_err(inner),
        other => CliError::Config(other.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "neuroloom", version, about = "Brain network model simulation engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Model DSL tools
    Model {
        #[command(subcommand)]
        cmd: ModelCmd,
    },
    /// Run a simulation described by a TOML config
    Run {
        config: PathBuf,
        /// Output directory (default: [output].dir, else `out` next to the
        /// config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the run (NEUROLOOM_WORKERS overrides)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a parameter sweep over a Cartesian grid
    Sweep {
        config: PathBuf,
        /// Grid axis, e.g. --grid G=0.1,0.2 (repeatable)
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// Concurrent sweep points
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Per-run summary: checksum | mean | fc-fit
        #[arg(long, default_value = "checksum")]
        summary: String,
        /// Empirical FC matrix file for --summary fc-fit
        #[arg(long)]
        empirical: Option<PathBuf>,
        /// Initial samples dropped before FC
        #[arg(long, default_value_t = 0)]
        discard: usize,
        /// Raw-monitor decimation for fc-fit runs
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove a fraction of a region's incoming connections
    Lesion {
        connectome: PathBuf,
        #[arg(long)]
        region: usize,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Post-lesion rescaling: restore | factor:<x>
        #[arg(long)]
        rewire: Option<String>,
        /// Output connectome zip
        #[arg(long)]
        out: PathBuf,
    },
    /// Functional connectivity of a time-series file
    Fc {
        timeseries: PathBuf,
        #[arg(long, default_value_t = 0)]
        discard: usize,
        /// Compare against an empirical FC matrix file
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Macro/micro co-simulation per the config's [cosim] section
    Cosim {
        config: PathBuf,
        /// Transport override: inprocess | socket
        #[arg(long)]
        transport: Option<String>,
        /// Socket port override
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print connectome statistics
    Info { connectome: PathBuf },
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Parse and compile a model XML file, printing its structure
    Validate {
        path: PathBuf,
        /// Also print the compiled bytecode
        #[arg(long)]
        dump_bytecode: bool,
    },
}

fn main() {
    // Die quietly when a downstream pipe closes (`neuroloom info ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Model {
            cmd: ModelCmd::Validate { path, dump_bytecode },
        } => commands::cmd_model_validate(path, *dump_bytecode),
        Cmd::Run { config, out, workers } => commands::cmd_run(config, out.as_deref(), *workers),
        Cmd::Sweep {
            config,
            grid,
            parallel,
            summary,
            empirical,
            discard,
            stride,
            out,
        } => commands::cmd_sweep(&commands::SweepArgs {
            config,
            grid,
            parallel: *parallel,
            summary,
            empirical: empirical.as_deref(),
            discard: *discard,
            stride: *stride,
            out: out.as_deref(),
        }),
        Cmd::Lesion {
            connectome,
            region,
            fraction,
            seed,
            rewire,
            out,
        } => commands::cmd_lesion(connectome, *region, *fraction, *seed, rewire.as_deref(), out),
        Cmd::Fc {
            timeseries,
            discard,
            fit,
            out,
        } => commands::cmd_fc(timeseries, *discard, fit.as_deref(), out.as_deref()),
        Cmd::Cosim {
            config,
            transport,
            port,
            out,
        } => commands::cmd_cosim(config, transport.as_deref(), *port, out.as_deref()),
        Cmd::Info { connectome } => commands::cmd_info(connectome),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
