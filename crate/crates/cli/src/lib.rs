//! Command-line front end of the `cavity-spdc` simulator.
//!
//! Each command reads an [`ExperimentConfig`], runs one pipeline of the core crate,
//! writes its tabular data as CSV into the output directory and a JSON
//! [`RunReport`] named after the command.
//!
//! All randomness derives from the single configured seed through the substreams
//! documented in the core crate, so results do not depend on the thread count.

pub mod commands;
pub mod config;
pub mod table;

use std::fmt;
use std::path::{Path, PathBuf};

use cavity_spdc::ParamIssue;
use serde::Serialize;
use serde_json::Value;

pub use config::{validate_config, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    Entangle,
    Chsh,
    TomoSimulate,
    TomoReconstruct,
    G2Sample,
    G2Fit,
    Coherence,
    RatesFit,
    PdhSweep,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Spectrum,
        Command::Entangle,
        Command::Chsh,
        Command::TomoSimulate,
        Command::TomoReconstruct,
        Command::G2Sample,
        Command::G2Fit,
        Command::Coherence,
        Command::RatesFit,
        Command::PdhSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Entangle => "entangle",
            Command::Chsh => "chsh",
            Command::TomoSimulate => "tomo-simulate",
            Command::TomoReconstruct => "tomo-reconstruct",
            Command::G2Sample => "g2-sample",
            Command::G2Fit => "g2-fit",
            Command::Coherence => "coherence",
            Command::RatesFit => "rates-fit",
            Command::PdhSweep => "pdh-sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<ParamIssue>),
    /// Malformed data in an input file.
    Input {
        path: PathBuf,
        message: String,
    },
    Io {
        path: PathBuf,
        message: String,
    },
    Model(cavity_spdc::Error),
    NonConvergence {
        report: PathBuf,
        detail: String,
    },
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Input { .. } | CliError::Model(_) => 1,
            CliError::Io { .. } => 2,
            CliError::NonConvergence { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(issues) => {
                write!(f, "invalid configuration:")?;
                for issue in issues {
                    write!(f, "\n  {issue}")?;
                }
                Ok(())
            }
            CliError::Input { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::NonConvergence { report, detail } => {
                write!(f, "{detail} (report written to {})", report.display())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<cavity_spdc::Error> for CliError {
    fn from(e: cavity_spdc::Error) -> Self {
        CliError::Model(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// RFC 3339, from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub results: Value,
}

/// Report timestamp. `SOURCE_DATE_EPOCH` pins it so that whole runs can be compared
/// byte for byte.
pub fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    let time = pinned.unwrap_or_else(|| {
        let now = chrono::Utc::now();
        chrono::DateTime::from_timestamp(now.timestamp(), 0).unwrap_or(now)
    });
    time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Options that locate the data files of a run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    /// Input data for the commands that read one; defaults to the file the producing
    /// command writes into `out_dir`.
    pub input: Option<PathBuf>,
}

/// Outcome of a command before it is wrapped into a report.
pub struct Outcome {
    pub results: Value,
    /// `None` when the command converged or has nothing to converge.
    pub failure: Option<String>,
}

/// Runs `command`, writes its CSV data and `<command>.json` into the output
/// directory, and returns the report.
pub fn run(command: Command, config: &ExperimentConfig, paths: &RunPaths) -> Result<RunReport, CliError> {
    let issues = config.issues();
    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }
    std::fs::create_dir_all(&paths.out_dir).map_err(|e| CliError::io(&paths.out_dir, e))?;
    let outcome = commands::execute(command, config, paths)?;
    let report = RunReport {
        tool: "cavity-spdc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        timestamp: timestamp(),
        seed: config.seed,
        config: config.clone(),
        results: outcome.results,
    };
    let path = paths.out_dir.join(format!("{}.json", command.name()));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    match outcome.failure {
        Some(detail) => Err(CliError::NonConvergence { report: path, detail }),
        None => Ok(report),
    }
}
