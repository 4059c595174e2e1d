use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Manifest, hash or split violations.
    #[error("{0}")]
    Data(String),
    /// The mesh/image round-trip bound was exceeded.
    #[error("{0}")]
    Gate(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] clothsr_core::Error),
    #[error(transparent)]
    Net(#[from] clothsr_net::NetError),
    #[error(transparent)]
    Tensor(#[from] clothsr_tensor::TensorError),
}

impl PipelineError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable short name for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::Data(_) => "data",
            PipelineError::Gate(_) => "gate",
            PipelineError::Numeric(_) => "numeric",
            PipelineError::Core(_) => "core",
            PipelineError::Net(_) => "net",
            PipelineError::Tensor(_) => "tensor",
        }
    }

    /// One-line JSON object describing the failure.
    pub fn error_line(&self, verb: &str) -> String {
        serde_json::json!({
            "status": "error",
            "verb": verb,
            "kind": self.kind(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}
