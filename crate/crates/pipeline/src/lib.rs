//! Data generation, training, inference, evaluation and benchmarking for
//! two-level cloth super-resolution.

pub mod bench;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod infer;
pub mod train;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
