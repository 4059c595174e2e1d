use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Tensor(#[from] clothsr_tensor::TensorError),
    #[error(transparent)]
    Core(#[from] clothsr_core::Error),
}
