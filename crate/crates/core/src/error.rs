use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported face with {corners} corners at line {line} (triangles only)")]
    UnsupportedFace { line: usize, corners: usize },
    #[error("missing uv coordinate at line {line}")]
    MissingUv { line: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate rest triangle {face} (material-space area {area:e})")]
    DegenerateTriangle { face: usize, area: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation step failed at t={time}s: non-finite state at vertex {vertex}")]
    StepFailure { vertex: usize, time: f64 },
    #[error("simulation failed at frame {frame}: {source}")]
    FrameFailure {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("image has no valid pixels")]
    NoValidPixels,
    #[error("bad image file: {0}")]
    Format(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Mismatch {
            what,
            expected,
            got,
        }
    }
}
