use thiserror::Error;

/// Errors raised anywhere in the sampling engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no mixture component carries condition {0}")]
    NoMatchingCondition(u32),
    #[error("frame {frame} sits at sigma = 0 and cannot be given a noise prediction")]
    DegenerateSigma { frame: usize },
    #[error("invalid timestep transition {from} -> {to}")]
    InvalidTimestep { from: usize, to: usize },
    #[error("timestep {0} is not an interior point of the inference grid")]
    OffGridTimestep(usize),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("lookahead denoising requires an even window, got f = {0}")]
    OddWindow(usize),
    #[error("iteration {iteration} lies beyond the condition schedule end {end}")]
    OutOfRange { iteration: usize, end: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("every sample was excluded by the denominator guard")]
    AllSamplesExcluded,
    #[error("state became non-finite at integration step {0}")]
    BlowUp(usize),
    #[error("worker failed while processing block {0}")]
    WorkerPanic(usize),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::NoMatchingCondition(_) => "NoMatchingCondition",
            Error::DegenerateSigma { .. } => "DegenerateSigma",
            Error::InvalidTimestep { .. } => "InvalidTimestep",
            Error::OffGridTimestep(_) => "OffGridTimestep",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::OddWindow(_) => "OddWindow",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::NonFinite(_) => "NonFinite",
            Error::AllSamplesExcluded => "AllSamplesExcluded",
            Error::BlowUp(_) => "BlowUp",
            Error::WorkerPanic(_) => "WorkerPanic",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
