//! Mean-field Gaussian variational inference for undirected models.

mod fit;
mod gradient;
mod likelihood;
mod optimizer;

pub use fit::{pvi_fadeout_fit, pvi_fit, ExpectationMode, FitConfig, FitReport, FitSession, Method, MrfFit};
pub use gradient::{
    centered_estimate, fadeout_grad, pathwise_grad_flat_q, FadeoutDraws, FlatPrior, VariationalState, BLOCK_NAMES,
};
pub use likelihood::{ExpectationSource, FnLikelihood, LikelihoodGradient, MrfLikelihood};
pub use optimizer::{OptimizerConfig, OptimizerState};
