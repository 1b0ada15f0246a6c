//! Gibbs and Swendsen-Wang samplers.

pub mod autocorr;
mod gibbs;
mod swendsen_wang;

pub use autocorr::{autocorrelation, integrated_autocorrelation_time};
pub use gibbs::{gibbs_sample, ChainPool, DenseModel};
pub use swendsen_wang::{auto_thinning, default_burn_in, swendsen_wang_sample, SwendsenWang};
