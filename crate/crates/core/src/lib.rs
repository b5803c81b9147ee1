pub mod architecture;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evolution;
pub mod genome;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod presets;
pub mod seed;
pub mod supernet;

pub use error::{Error, Result};
