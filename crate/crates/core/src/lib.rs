pub mod baselines;
pub mod error;
pub mod harness;
pub mod latent;
pub mod metrics;
pub mod models;
pub mod nes;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
