use thiserror::Error;

/// Errors raised by the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("degenerate mesh: |volume| = {0:e}")]
    DegenerateMesh(f64),

    #[error("singular dynamics: {0}")]
    SingularDynamics(String),

    #[error("diffusion step {step} outside [1, {max}]")]
    StepOutOfRange { step: usize, max: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate alignment: {0}")]
    AlignmentDegenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::InsufficientFrames { .. }
                | Error::Parameter(_)
                | Error::Topology(_)
                | Error::StepOutOfRange { .. }
                | Error::EmptyDataset
                | Error::Parse(_)
                | Error::Json(_)
        )
    }

    /// True for numerical failures (singular systems, divergence, degeneracy).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateMesh(_)
                | Error::SingularDynamics(_)
                | Error::NonFinite(_)
                | Error::AlignmentDegenerate(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(what: impl Into<String>) -> Error {
    Error::Shape(what.into())
}
