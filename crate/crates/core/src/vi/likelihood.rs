//! Likelihood-gradient sources for the variational loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{enumerate_slice, FeatureExpectations, ModelShape, DEFAULT_ENUMERATION_CAP};
use crate::sampler::{ChainPool, DenseModel};

/// Supplies `grad_theta log p(D | theta)`.
pub trait LikelihoodGradient {
    fn num_params(&self) -> usize;

    /// Overwrites `out` with the gradient at `theta`.
    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()>;
}

/// How model expectations are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationSource {
    /// Persistent Gibbs chains advanced `sweeps` times per gradient.
    Chains { pool: ChainPool, sweeps: usize },
    /// Exact enumeration.
    Exact,
}

/// `N (E_D[f] - E_theta[f])` for an Ising or Potts model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfLikelihood {
    shape: ModelShape,
    data: Vec<f64>,
    n_eff: f64,
    source: ExpectationSource,
    #[serde(skip)]
    scratch: Vec<f64>,
}

impl MrfLikelihood {
    pub fn new(data: &FeatureExpectations, n_eff: f64, source: ExpectationSource) -> Result<Self> {
        if !(n_eff.is_finite() && n_eff >= 0.0) {
            return Err(Error::Domain(format!("sample size must be non-negative, got {n_eff}")));
        }
        let shape = data.shape();
        match &source {
            ExpectationSource::Chains { pool, sweeps } => {
                if pool.shape() != shape {
                    return Err(Error::Shape("chain pool and data layouts differ".into()));
                }
                if *sweeps == 0 {
                    return Err(Error::Config("at least one Gibbs sweep per gradient is required".into()));
                }
            }
            ExpectationSource::Exact => {
                let states = shape.num_configurations();
                if states > DEFAULT_ENUMERATION_CAP {
                    return Err(Error::Capacity { states, cap: DEFAULT_ENUMERATION_CAP });
                }
            }
        }
        Ok(Self {
            shape,
            data: data.as_slice().to_vec(),
            n_eff,
            source,
            scratch: Vec::new(),
        })
    }

    pub fn persistent(data: &FeatureExpectations, n_eff: f64, pool: ChainPool, sweeps: usize) -> Result<Self> {
        Self::new(data, n_eff, ExpectationSource::Chains { pool, sweeps })
    }

    pub fn exact(data: &FeatureExpectations, n_eff: f64) -> Result<Self> {
        Self::new(data, n_eff, ExpectationSource::Exact)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }

    pub fn source(&self) -> &ExpectationSource {
        &self.source
    }

    pub fn sweep_count(&self) -> u64 {
        match &self.source {
            ExpectationSource::Chains { pool, .. } => pool.sweep_count(),
            ExpectationSource::Exact => 0,
        }
    }

    /// Exact `N (<theta, E_D> - log Z)`.
    pub fn log_likelihood_exact(&self, theta: &[f64]) -> Result<f64> {
        let e = enumerate_slice(self.shape, theta, DEFAULT_ENUMERATION_CAP)?;
        let dot: f64 = theta.iter().zip(&self.data).map(|(a, b)| a * b).sum();
        Ok(self.n_eff * (dot - e.log_z))
    }
}

impl LikelihoodGradient for MrfLikelihood {
    fn num_params(&self) -> usize {
        self.data.len()
    }

    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        if self.n_eff == 0.0 {
            out.iter_mut().for_each(|g| *g = 0.0);
            return Ok(());
        }
        let model = match &mut self.source {
            ExpectationSource::Chains { pool, sweeps } => {
                self.scratch.clear();
                self.scratch.resize(self.data.len(), 0.0);
                pool.estimate_into(&DenseModel::from_slice(self.shape, theta), *sweeps, &mut self.scratch)?;
                &self.scratch
            }
            ExpectationSource::Exact => {
                self.scratch = enumerate_slice(self.shape, theta, DEFAULT_ENUMERATION_CAP)?
                    .expectations()
                    .into_vec();
                &self.scratch
            }
        };
        for ((o, d), m) in out.iter_mut().zip(&self.data).zip(model) {
            *o = self.n_eff * (d - m);
        }
        Ok(())
    }
}

/// Wraps a closure `(theta, out)` as a likelihood gradient.
pub struct FnLikelihood<F> {
    len: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64])> FnLikelihood<F> {
    pub fn new(len: usize, f: F) -> Self {
        Self { len, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64])> LikelihoodGradient for FnLikelihood<F> {
    fn num_params(&self) -> usize {
        self.len
    }

    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(theta, out);
        Ok(())
    }
}
