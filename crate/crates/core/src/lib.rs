pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod vi;

pub use error::{Error, Result};
