use std::path::PathBuf;

/// Errors produced by the tracking library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate rectangle (w={w}, h={h})")]
    DegenerateRect { w: f64, h: f64 },

    #[error("sample memory is empty")]
    EmptyMemory,

    #[error("non-positive curvature {curvature:e} at conjugate gradient iteration {iteration}")]
    NonPositiveCurvature { iteration: usize, curvature: f64 },

    #[error("short-term template requested but none is set")]
    MissingShortTemplate,

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("malformed sequence: {0}")]
    Sequence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
