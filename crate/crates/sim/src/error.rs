use std::path::PathBuf;

use oneaudit_core::AuditError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("InfeasibleSpec: {0}")]
    InfeasibleSpec(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

pub(crate) fn infeasible(msg: impl Into<String>) -> SimError {
    SimError::InfeasibleSpec(msg.into())
}
