use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] hetcache::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use hetcache::Error as E;
        match self {
            Self::Invalid(_) => 2,
            Self::Model(E::Convergence { .. } | E::Bracket { .. } | E::Infeasible(_)) => 3,
            Self::Model(_) => 2,
            Self::Io { .. } | Self::Csv(_) | Self::Json(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
