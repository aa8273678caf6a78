use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate feature")]
    DegenerateFeature,

    #[error(
        "inconsistent weak labels: {outflow_zeros} shared in outflow vs {inflow_zeros} in inflow"
    )]
    InconsistentWeakLabels {
        outflow_zeros: usize,
        inflow_zeros: usize,
    },

    #[error("no shared individuals")]
    NoSharedIndividuals,

    #[error("invalid cost matrix: {0}")]
    InvalidCostMatrix(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("association is not a bijection on {0} elements")]
    NotBijective(usize),

    #[error("oracle size limit: min side {0} exceeds {max}", max = crate::assign::BRUTE_FORCE_LIMIT)]
    OracleSizeLimit(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("invalid similarity blocks: {0}")]
    InvalidBlocks(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("video {0:?} has zero ground-truth count")]
    ZeroGroundTruth(String),

    #[error("missing ground-truth identity in frame {frame}")]
    MissingGroundTruth { frame: usize },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Failures that stem from non-finite or otherwise unusable numbers rather
    /// than malformed input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::InvalidCostMatrix(_))
    }
}
