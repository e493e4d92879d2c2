use std::path::PathBuf;

use thiserror::Error;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    Config = 2,
    Data = 3,
    Training = 4,
    Criteria = 5,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pkml::Error),

    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },

    #[error("missing artifact {0} (run the training command first or pass --train)")]
    MissingArtifact(PathBuf),

    #[error("check failed: {0}")]
    Criteria(String),
}

impl CliError {
    pub fn exit_kind(&self) -> ExitKind {
        use pkml::Error as E;
        match self {
            CliError::Config { .. } => ExitKind::Config,
            CliError::MissingArtifact(_) => ExitKind::Data,
            CliError::Criteria(_) => ExitKind::Criteria,
            CliError::Core(e) => match e {
                E::Config(_) => ExitKind::Config,
                E::Io { .. } | E::Format { .. } | E::UnknownSpecies(_) => ExitKind::Data,
                _ => ExitKind::Training,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
