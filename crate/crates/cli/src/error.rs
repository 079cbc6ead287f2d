use std::path::PathBuf;

use thiserror::Error;

use crate::config::Violation;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config does not parse: {0}")]
    Parse(String),

    #[error("config is invalid:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),

    #[error("experiment {experiment} ({recipe}): {source}")]
    Numerical {
        experiment: String,
        recipe: &'static str,
        #[source]
        source: kicklab_core::Error,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("thread pool: {0}")]
    Threads(String),
}

impl CliError {
    /// 2 for a config that cannot run, 3 when the numerics fail, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid(_) => 2,
            CliError::Numerical { .. } => 3,
            _ => 1,
        }
    }
}
