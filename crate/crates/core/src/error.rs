use thiserror::Error;

use crate::dst::MassViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("frame mismatch: {left:?} vs {right:?}")]
    FrameMismatch { left: Vec<String>, right: Vec<String> },

    #[error("frame has {k} classes; general mass functions support at most {max}")]
    FrameTooLarge { k: usize, max: usize },

    #[error("subset {bits:#b} is outside a frame of {k} classes")]
    SubsetOutOfRange { bits: u32, k: usize },

    #[error("invalid mass function: {}", join_violations(.0))]
    InvalidMass(Vec<MassViolation>),

    #[error("total conflict between sources (kappa = {kappa})")]
    TotalConflict { kappa: f64 },

    #[error("cannot condition on a set of zero plausibility")]
    ZeroPlausibility,

    #[error("focal set {bits:#b} is not contained in the conditioning set {context:#b}")]
    FocalSetOutsideContext { bits: u32, context: u32 },

    #[error("value {value} for {what} is outside [0, 1]")]
    OutOfUnitInterval { what: &'static str, value: f64 },

    #[error("all-zero contour cannot be normalized")]
    ZeroContour,

    #[error("fusion denominator is zero: every class is implausible under some modality")]
    DegenerateFusion,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("example has no foreground voxels")]
    NoForeground,

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    #[error("{0}")]
    Format(String),

    #[error("unexpected end of payload")]
    Truncated,

    #[error("not a {0}")]
    BadMagic(&'static str),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version { what: &'static str, found: u32, expected: u32 },

    #[error("{what} mismatch: dataset has {dataset}, checkpoint has {checkpoint}")]
    CheckpointMismatch { what: &'static str, dataset: usize, checkpoint: usize },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidFrame(_)
            | Error::FrameMismatch { .. }
            | Error::FrameTooLarge { .. }
            | Error::SubsetOutOfRange { .. } => "E_FRAME",
            Error::InvalidMass(_) => "E_MASS",
            Error::TotalConflict { .. } => "E_CONFLICT",
            Error::ZeroPlausibility
            | Error::FocalSetOutsideContext { .. }
            | Error::OutOfUnitInterval { .. }
            | Error::ZeroContour
            | Error::DegenerateFusion => "E_DOMAIN",
            Error::DimensionMismatch { .. } | Error::Empty(_) | Error::NoForeground => "E_SHAPE",
            Error::NonFinite { .. } => "E_DIVERGED",
            Error::Format(_) | Error::Truncated | Error::BadMagic(_) | Error::Version { .. } => {
                "E_FORMAT"
            }
            Error::CheckpointMismatch { .. } => "E_MISMATCH",
            Error::Config(_) | Error::Json(_) => "E_CONFIG",
            Error::Io(_) => "E_IO",
        }
    }
}

fn join_violations(v: &[MassViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
