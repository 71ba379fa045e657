pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod param;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nn::{ModelConfig, RgaNet};
pub use tensor::Tensor;
