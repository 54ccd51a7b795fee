use thiserror::Error;

/// Errors produced by the library. `exit_code` maps each variant onto the
/// CLI's stable contract: 2 for validation failures, 3 for numerical ones.
#[derive(Error, Debug)]
pub enum TpsqrError {
    #[error("subject {subject}: events of distinct types share timestamp {timestamp}")]
    DuplicateTimestamp { subject: String, timestamp: f64 },

    #[error("subject {subject}: events not sorted by timestamp at t={timestamp}")]
    UnsortedEvents { subject: String, timestamp: f64 },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("lag windows invalid: {0}")]
    Windows(String),

    #[error("solver did not converge after {iterations} outer iterations (objective {objective})")]
    NonConvergence { iterations: usize, objective: f64 },

    #[error("truncated support too small: tail mass fraction {fraction:.3e} exceeds {limit:.1e}")]
    TailMass { fraction: f64, limit: f64 },

    #[error("state space guard exceeded: {states} states > {limit}")]
    StateSpaceGuard { states: u64, limit: u64 },

    #[error("AUC undefined: no {missing} labels present")]
    DegenerateLabels { missing: &'static str },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TpsqrError {
    /// CLI exit code for this error: 2 = validation, 3 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            TpsqrError::NonConvergence { .. }
            | TpsqrError::TailMass { .. }
            | TpsqrError::StateSpaceGuard { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, TpsqrError>;
