pub mod am;
pub mod data;
mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod rng;
mod scalar;
pub mod spatial;

pub use error::{Error, Result};
pub use scalar::Scalar;
