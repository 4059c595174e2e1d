//! Multi-feature super-resolution of cloth geometry images: a shared
//! residual dense trunk with displacement, normal and velocity heads, the
//! training losses and the evaluation metrics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;

pub use config::{LossWeights, NetConfig, ABLATIONS};
pub use error::{NetError, Result};
pub use model::{forward, init_params, Mfsr, ParamSpec, Prediction};
