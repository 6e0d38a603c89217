//! Command-line driver: mesh generation, property checks, cohomology
//! reports and Hodge Laplacian convergence studies.
//!
//! Exit status: 0 on success, 2 when a check fails (including structurally
//! invalid meshes), 3 on configuration errors, 1 otherwise.

mod commands;
mod config;
mod gen;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use env_logger::Env;

use crate::commands::{Failure, EXIT_CONFIG};
use crate::config::{Command, Flags, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ddr-cli", version, about = "Discrete de Rham and VEM complexes on polytopal meshes")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Generate or load a mesh and write it as ddrmesh-v1 JSON.
    Mesh(Flags),
    /// Run the property suites on a mesh.
    Check(Flags),
    /// Compare discrete cohomology dimensions with the Betti numbers.
    Cohomology(Flags),
    /// Convergence study of the Hodge Laplacian on a refinement family.
    Hodge(Flags),
}

fn run(command: Command, flags: &Flags) -> Result<u8, Failure> {
    let cfg = RunConfig::resolve(command, flags).map_err(Failure::Config)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| Failure::Runtime(e.into()))?;
    }
    match command {
        Command::Mesh => commands::mesh(&cfg),
        Command::Check => commands::check(&cfg),
        Command::Cohomology => commands::cohomology(&cfg),
        Command::Hodge => commands::hodge(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, flags) = match &cli.command {
        Sub::Mesh(f) => (Command::Mesh, f),
        Sub::Check(f) => (Command::Check, f),
        Sub::Cohomology(f) => (Command::Cohomology, f),
        Sub::Hodge(f) => (Command::Hodge, f),
    };
    match run(command, flags) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
