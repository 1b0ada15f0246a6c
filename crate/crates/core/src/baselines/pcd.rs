//! Persistent contrastive divergence with proximal penalty steps.

use serde::{Deserialize, Serialize};

use super::penalized::RegularizerSpec;
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sampler::ChainPool;
use crate::vi::{ExpectationMode, ExpectationSource, FitConfig, LikelihoodGradient, MrfLikelihood, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcdFit {
    pub params: ModelParams,
    pub iterations: usize,
    pub grad_norm_trace: Vec<f64>,
}

/// Stochastic maximum likelihood with a persistent chain pool. `config.draws`
/// is ignored; each iteration uses one expectation estimate.
pub fn fit_pcd(dataset: &WeightedDataset, reg: &RegularizerSpec, config: &FitConfig) -> Result<PcdFit> {
    config.validate()?;
    reg.validate()?;
    let shape = dataset.shape();
    let n = config.n_eff.unwrap_or(dataset.n_eff());
    if !(n > 0.0) {
        return Err(Error::Domain(format!("sample size must be positive, got {n}")));
    }
    let source = match config.expectations {
        ExpectationMode::Persistent => ExpectationSource::Chains {
            pool: ChainPool::new(shape, config.chains, config.seed)?,
            sweeps: config.sweeps,
        },
        ExpectationMode::Exact => ExpectationSource::Exact,
    };
    // unit sample size: the gradient is E_D - E_theta and penalties are scaled by 1/N
    let mut lik = MrfLikelihood::new(&dataset.expectations(), 1.0, source)?;
    let len = shape.num_params();
    let mut theta = vec![0.0; len];
    let mut grad = vec![0.0; len];
    let mut steps = vec![0.0; len];
    let mut opt = OptimizerState::new(len);
    let mut trace = Vec::with_capacity(config.iterations);
    for t in 0..config.iterations {
        lik.gradient(&theta, &mut grad)?;
        let mut penalty = vec![0.0; len];
        reg.smooth(shape, &theta, &mut penalty);
        for (g, p) in grad.iter_mut().zip(&penalty) {
            *g -= p / n;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.push(norm);
        if !norm.is_finite() || norm * n > config.divergence_threshold {
            let from = trace.len().saturating_sub(100);
            return Err(Error::Divergence { iteration: t, norm, trace: trace[from..].to_vec() });
        }
        opt.ascend_recording(&config.optimizer, config.iterations, &mut theta, &grad, Some(&mut steps));
        reg.prox(shape, &mut theta, 1.0 / n, Some(&steps));
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { block: "parameters".into(), iteration: t });
        }
    }
    Ok(PcdFit { params: ModelParams::from_vec(shape, theta)?, iterations: config.iterations, grad_norm_trace: trace })
}
