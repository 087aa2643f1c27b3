//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building fusion models, propagating
/// state, running simulations, or doing file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix required to have full column rank does not.
    #[error("rank-deficient matrix: smallest/largest singular value ratio {ratio:.3e} is below {threshold:.1e}")]
    RankDeficient { ratio: f64, threshold: f64 },

    /// The matrix has full row rank, so its left nullspace is trivial.
    #[error("matrix has full row rank; left nullspace is empty")]
    NoNullspace,

    /// The array geometry leaves specific force unobservable after
    /// marginalizing angular acceleration.
    #[error("degenerate array geometry: specific force unobservable (rank of projected stack is {rank} < 3)")]
    DegenerateGeometry { rank: usize },

    /// A per-IMU collection did not match the array size.
    #[error("expected {expected} per-IMU entries, got {got}")]
    CountMismatch { expected: usize, got: usize },

    /// Samples handed to the fuser were not taken at the same instant.
    #[error("sample timestamps skewed by {skew_s:.3e} s (maximum allowed 1e-6 s)")]
    MisalignedTimestamps { skew_s: f64 },

    /// Propagation step outside the supported range.
    #[error("invalid propagation step dt = {dt_s} s (must satisfy 0 < dt <= 0.1)")]
    InvalidDt { dt_s: f64 },

    /// The virtual sample stream ends before the requested horizon.
    #[error("sample stream ends at {stream_end_s} s, before the requested horizon end {needed_s} s")]
    StreamExhausted { stream_end_s: f64, needed_s: f64 },

    /// Trajectory evaluated outside its domain.
    #[error("time {t_s} s is outside the trajectory range [0, {duration_s}] s")]
    OutOfRange { t_s: f64, duration_s: f64 },

    /// A semantically invalid configuration value.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// The config file is not syntactically valid JSON.
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// The config file is valid JSON but violates the schema.
    #[error("{path}: schema error at line {line}, column {column}: {message}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// A malformed measurement log record.
    #[error("{path}: malformed log: {message}")]
    Format { path: String, message: String },

    /// Log files share no aligned timestamps.
    #[error("no timestamp groups aligned across all provided logs")]
    EmptyIntersection,

    /// Underlying file-system failure.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
