pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod forecasting;
pub mod generative;
pub mod inference;
pub mod model;
pub mod rng;
pub mod simulators;
pub mod training;

pub use config::{EmissionFamily, ModelConfig};
pub use error::{Error, Result};
pub use model::{Ds3m, Sequence};
