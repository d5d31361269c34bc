use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate calibration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity (homogeneous scale {0:e})")]
    PointAtInfinity(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("all responsibilities underflowed for measurement {0}")]
    NumericalUnderflow(usize),
    #[error("scale matrix of component {0} is singular")]
    SingularScale(usize),
    #[error("targets are coincident, force direction undefined")]
    CoincidentTargets,
    #[error("{modes} interaction modes exceed the cap of {cap}")]
    ModeExplosion { modes: usize, cap: usize },
    #[error("cluster has no member pixels")]
    EmptyCluster,
    #[error("target {0} has no reference histogram")]
    MissingReferenceHistogram(u64),
    #[error("every hypothesis has zero probability")]
    DegenerateWeights,
    #[error("birth cluster is empty")]
    EmptyBirthCluster,
    #[error("all particle weights of target {0} vanished")]
    AllZeroWeights(u64),
    #[error("ground truth is empty")]
    NoGroundTruth,
    #[error("no matches between estimates and ground truth")]
    NoMatches,
    #[error("evaluation interval contains no frames")]
    EmptyInterval,
    #[error("track and ground-truth frame ranges do not overlap")]
    NoOverlap,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{path}: row {row}: {message}")]
    MalformedCsv {
        path: String,
        row: u64,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::ConfigInvalid(_)
                | Error::MalformedCsv { .. }
                | Error::DegenerateConfiguration(_)
                | Error::DimensionMismatch { .. }
                | Error::NoOverlap
                | Error::NoGroundTruth
        )
    }
}
