use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use snlmm::Error;

mod args;
mod commands;
mod config;

/// Failure of a command, mapped onto the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 usage, 2 numerical failure, 3 non-convergence.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                Error::NotConverged => 3,
                Error::SingularCluster { .. }
                | Error::RankDeficient { .. }
                | Error::InfoNotPositiveDefinite { .. }
                | Error::Boundary { .. }
                | Error::AllSplitsSingular
                | Error::Study(_) => 2,
                _ => 1,
            },
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
