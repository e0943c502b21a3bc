use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {0} lies outside the open box (-pi/2, pi/2)")]
    OutOfBox(f64),

    #[error("density {density:e} at or below node floor {floor:e}")]
    Node { density: f64, floor: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expectation value has imaginary residue {0:e}")]
    NonHermitian(f64),

    #[error("rejection sampler stalled after {0} consecutive rejections")]
    SamplerStalled(u64),

    #[error("density {density:e} exceeds rejection envelope {bound:e}")]
    EnvelopeViolated { density: f64, bound: f64 },

    #[error("collapse outcome weight {0:e} is negligible")]
    NegligibleOutcome(f64),

    #[error("{failed} of {count} trajectories failed (limit is 1%)")]
    TooManyFailures { failed: usize, count: usize },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
