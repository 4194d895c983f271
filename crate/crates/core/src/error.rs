use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("ambiguous eigenvalue grouping: {0}")]
    DegeneracyResolution(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// First-order draw probabilities left the unit interval.
    #[error("timestep too large at step {step}: jump probabilities {jump_probabilities:?} sum to {total}")]
    TimestepTooLarge { step: u64, jump_probabilities: Vec<f64>, total: f64 },

    #[error("jump operator {jump} maps the state to a numerically zero vector at step {step}")]
    InvalidJump { step: u64, jump: usize },

    #[error("integration step too coarse: drift {drift:e} exceeds {limit:e}")]
    StepSize { drift: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),
}

impl Error {
    /// Stable machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Validation(_) => "validation",
            Error::DegeneracyResolution(_) => "degeneracy_resolution",
            Error::Index(_) => "index",
            Error::Argument(_) => "argument",
            Error::TimestepTooLarge { .. } => "timestep_too_large",
            Error::InvalidJump { .. } => "invalid_jump",
            Error::StepSize { .. } => "step_size",
            Error::Numerical(_) => "numerical",
            Error::InternalConsistency(_) => "internal_consistency",
        }
    }

    /// Re-labels a step-level failure with the step at which it happened.
    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            Error::TimestepTooLarge { jump_probabilities, total, .. } => {
                Error::TimestepTooLarge { step, jump_probabilities, total }
            }
            Error::InvalidJump { jump, .. } => Error::InvalidJump { step, jump },
            other => other,
        }
    }
}
