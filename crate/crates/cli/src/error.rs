use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("I/O error on {path}: {reason}")]
    Io { path: String, reason: String },

    #[error(transparent)]
    Model(#[from] kac_turing::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    /// 1 acceptance or run failure, 2 configuration, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use kac_turing::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Model(E::Parameter { .. } | E::Domain(_) | E::Bracket(_) | E::Shape { .. } | E::InsufficientSamples { .. }) => 2,
            CliError::Model(_) => 1,
        }
    }
}
