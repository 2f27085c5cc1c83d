use thiserror::Error;

use crate::pose::KeypointName;

/// Crate-wide error type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition on numeric or structural input was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// No fruit seed pixel resolved to a 3D point in the cropped cloud.
    #[error("no seed pixel resolved to a point ({seeds} seeds tried)")]
    SeedResolution { seeds: usize },

    #[error("truss {truss_id} has no assigned fruits")]
    EmptyTruss { truss_id: u64 },

    #[error("pose is missing keypoint {0:?}")]
    PoseIncomplete(KeypointName),

    #[error("collision could not be resolved after {iterations} shift iterations")]
    PlanInfeasible { iterations: usize },

    #[error("illegal event {event} in state {state}")]
    Protocol { state: String, event: String },

    /// Malformed input file, with location information.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
