//! Dense NCHW tensors with a reverse-mode tape, Adam and a checkpoint file
//! format. Generic over `f32` (training) and `f64` (gradient checks).

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod scalar;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NamedAffine};
pub use error::{Result, TensorError};
pub use graph::{Graph, Padding, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
