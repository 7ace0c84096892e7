use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("reported assorter margin {margin} is not positive; the audit cannot proceed")]
    NonPositiveMargin { margin: f64 },

    #[error("batch `{batch}` has no cast-vote records")]
    EmptyBatch { batch: String },

    #[error("bet {bet} outside [0, {max}] at draw {draw}")]
    BetOutOfRange { bet: f64, max: f64, draw: usize },

    #[error("no feasible point on the stratified null boundary: {reason}")]
    EmptyNull { reason: String },

    #[error("population is empty")]
    EmptyPopulation,

    #[error("value {value} at position {index} lies outside [0, {upper}]")]
    ValueOutOfRange {
        index: usize,
        value: f64,
        upper: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl AuditError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        AuditError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;
