//! The persistent variational fit loop.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gradient::{
    centered_estimate, fadeout_grad, pathwise_grad_flat_q, FadeoutDraws, FlatPrior, VariationalState, BLOCK_NAMES,
};
use super::likelihood::{ExpectationSource, LikelihoodGradient, MrfLikelihood};
use super::optimizer::{OptimizerConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::model::{FeatureExpectations, ModelParams};
use crate::prior::{HyperPriorSpec, ScaleLayout};
use crate::rng::{streams, substream};
use crate::sampler::ChainPool;

/// Where the model expectations inside the loop come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    #[default]
    Persistent,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Gibbs sweeps per gradient estimate.
    pub sweeps: usize,
    /// Persistent chains.
    pub chains: usize,
    /// Variational draws per iteration.
    pub draws: usize,
    pub iterations: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Replaces the sample size passed to the fit when set.
    pub n_eff: Option<f64>,
    /// Per-block gradient norm cap applied before each step.
    pub clip_norm: Option<f64>,
    pub init_log_std: f64,
    pub init_log_sigma: f64,
    /// Abort when the gradient norm exceeds this.
    pub divergence_threshold: f64,
    pub expectations: ExpectationMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::ising_paper()
    }
}

impl FitConfig {
    /// PVI-3, 100 chains, Adam at 0.01 decayed linearly to 0 over 5e4 iterations.
    pub fn ising_paper() -> Self {
        Self {
            sweeps: 3,
            chains: 100,
            draws: 1,
            iterations: 50_000,
            optimizer: OptimizerConfig::adam(0.01, true),
            seed: 0,
            n_eff: None,
            clip_norm: Some(1e3),
            init_log_std: -3.0,
            init_log_sigma: -1.0,
            divergence_threshold: 1e8,
            expectations: ExpectationMode::Persistent,
        }
    }

    /// PVI-10 with 40 chains and a constant Adam rate.
    pub fn potts_paper() -> Self {
        Self {
            sweeps: 10,
            chains: 40,
            iterations: 5_000,
            optimizer: OptimizerConfig::adam(0.01, false),
            ..Self::ising_paper()
        }
    }

    /// Ten variational draws per iteration.
    pub fn protein_paper() -> Self {
        Self {
            draws: 10,
            iterations: 10_000,
            ..Self::potts_paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ising_paper" => Ok(Self::ising_paper()),
            "potts_paper" => Ok(Self::potts_paper()),
            "protein_paper" => Ok(Self::protein_paper()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected ising_paper, potts_paper or protein_paper)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.chains == 0 || self.draws == 0 || self.iterations == 0 {
            return Err(Error::Config("sweeps, chains, draws and iterations must all be at least 1".into()));
        }
        if let Some(n) = self.n_eff {
            if !(n.is_finite() && n >= 0.0) {
                return Err(Error::Config(format!("n_eff must be non-negative, got {n}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.optimizer.validate()
    }
}

/// Variational family and prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Gaussian `q` directly over the parameters.
    Pvi { prior: FlatPrior },
    /// Gaussian `q` over noncentered parameters and log-scales.
    Fadeout { spec: HyperPriorSpec },
}

/// Optimizer-side state of a fit: everything except the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSession {
    method: Method,
    config: FitConfig,
    layout: ScaleLayout,
    state: VariationalState,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    iteration: usize,
    grad_norm_trace: Vec<f64>,
}

impl FitSession {
    /// `layout` partitions the parameters into scale groups; it is ignored by [`Method::Pvi`].
    pub fn new(method: Method, config: FitConfig, layout: ScaleLayout) -> Result<Self> {
        config.validate()?;
        let state = match &method {
            Method::Pvi { .. } => VariationalState::flat(layout.num_params(), config.init_log_std),
            Method::Fadeout { spec } => {
                spec.validate()?;
                VariationalState::fadeout(&layout, spec, config.init_log_std, config.init_log_sigma)
            }
        };
        Ok(Self {
            method,
            optimizer: OptimizerState::new(state.len()),
            rng: substream(config.seed, streams::VARIATIONAL),
            config,
            layout,
            state,
            iteration: 0,
            grad_norm_trace: Vec::new(),
        })
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn state(&self) -> &VariationalState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut VariationalState {
        &mut self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn grad_norm_trace(&self) -> &[f64] {
        &self.grad_norm_trace
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Posterior mean of the model parameters.
    pub fn estimate(&self) -> Vec<f64> {
        match &self.method {
            Method::Pvi { .. } => self.state.mu_theta.clone(),
            Method::Fadeout { spec } => centered_estimate(&self.state, spec, &self.layout),
        }
    }

    fn normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// `Q`-draw average of the single-draw ELBO gradient at the current state.
    pub fn gradient(&mut self, likelihood: &mut dyn LikelihoodGradient) -> Result<VariationalState> {
        let q = self.config.draws;
        let mut acc = self.state.zeros_like();
        for _ in 0..q {
            let g = match self.method {
                Method::Pvi { prior } => {
                    let eps = self.normal(self.state.mu_theta.len());
                    let (gm, gs) = pathwise_grad_flat_q(likelihood, &prior, &self.state.mu_theta, &self.state.s_theta, &eps)?;
                    let mut g = self.state.zeros_like();
                    g.mu_theta = gm;
                    g.s_theta = gs;
                    g
                }
                Method::Fadeout { spec } => {
                    let draws = FadeoutDraws {
                        z1: self.normal(self.state.mu_tau.len()),
                        z2: self.normal(self.state.mu_theta.len()),
                        z3: self.normal(self.state.mu_log_sigma.len()),
                    };
                    fadeout_grad(likelihood, &self.state, &spec, &self.layout, &draws)?
                }
            };
            acc.add_scaled(&g, 1.0 / q as f64);
        }
        Ok(acc)
    }

    /// One optimizer iteration.
    pub fn step(&mut self, likelihood: &mut dyn LikelihoodGradient) -> Result<()> {
        let t = self.iteration;
        let mut grad = self.gradient(likelihood).map_err(|e| match e {
            Error::Numerical { block, .. } => Error::Numerical { block, iteration: t },
            other => other,
        })?;
        let norm = grad.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
        self.grad_norm_trace.push(norm);
        if !norm.is_finite() || norm > self.config.divergence_threshold {
            let from = self.grad_norm_trace.len().saturating_sub(100);
            return Err(Error::Divergence { iteration: t, norm, trace: self.grad_norm_trace[from..].to_vec() });
        }
        if let Some(cap) = self.config.clip_norm {
            for b in grad.blocks_mut() {
                let n = b.iter().map(|g| g * g).sum::<f64>().sqrt();
                if n > cap {
                    b.iter_mut().for_each(|g| *g *= cap / n);
                }
            }
        }
        let mut x = self.state.to_flat();
        self.optimizer
            .ascend(&self.config.optimizer, self.config.iterations, &mut x, &grad.to_flat());
        self.state.set_from_flat(&x);
        for (name, b) in BLOCK_NAMES.iter().zip(self.state.blocks()) {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical { block: name.to_string(), iteration: t });
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Steps until `iterations` have been taken in total.
    pub fn run(&mut self, likelihood: &mut dyn LikelihoodGradient) -> Result<()> {
        while !self.is_done() {
            self.step(likelihood)?;
        }
        Ok(())
    }
}

/// A complete fit of an Ising or Potts model; serializes as a resumable checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfFit {
    pub session: FitSession,
    pub likelihood: MrfLikelihood,
}

impl MrfFit {
    pub fn new(data: &FeatureExpectations, n_eff: f64, method: Method, config: FitConfig) -> Result<Self> {
        config.validate()?;
        let shape = data.shape();
        let n_eff = config.n_eff.unwrap_or(n_eff);
        let source = match config.expectations {
            ExpectationMode::Persistent => ExpectationSource::Chains {
                pool: ChainPool::new(shape, config.chains, config.seed)?,
                sweeps: config.sweeps,
            },
            ExpectationMode::Exact => ExpectationSource::Exact,
        };
        let likelihood = MrfLikelihood::new(data, n_eff, source)?;
        let layout = match &method {
            Method::Fadeout { spec } => ScaleLayout::new(&shape, spec.grouping),
            Method::Pvi { .. } => ScaleLayout::per_parameter(shape.num_fields(), shape.num_params()),
        };
        let session = FitSession::new(method, config, layout)?;
        Ok(Self { session, likelihood })
    }

    pub fn step(&mut self) -> Result<()> {
        self.session.step(&mut self.likelihood)
    }

    /// Runs `n` more iterations, stopping early at the configured total.
    pub fn advance(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.session.is_done() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<FitReport> {
        let start = Instant::now();
        self.session.run(&mut self.likelihood)?;
        let mut report = self.report()?;
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        Ok(report)
    }

    pub fn report(&self) -> Result<FitReport> {
        Ok(FitReport {
            method: self.session.method,
            state: self.session.state.clone(),
            estimate: ModelParams::from_vec(self.likelihood.shape(), self.session.estimate())?,
            grad_norm_trace: self.session.grad_norm_trace.clone(),
            iterations: self.session.iteration,
            sweeps: self.likelihood.sweep_count(),
            wall_clock_secs: 0.0,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    pub state: VariationalState,
    /// Centered posterior-mean parameters.
    pub estimate: ModelParams,
    pub grad_norm_trace: Vec<f64>,
    pub iterations: usize,
    /// Total single-chain Gibbs sweeps.
    pub sweeps: u64,
    /// Not serialized, so reports of replayed runs compare byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Persistent VI with a Gaussian `q` over the parameters.
pub fn pvi_fit(data: &FeatureExpectations, n_eff: f64, prior: FlatPrior, config: &FitConfig) -> Result<FitReport> {
    MrfFit::new(data, n_eff, Method::Pvi { prior }, config.clone())?.run()
}

/// Persistent VI in noncentered coordinates under a scale-mixture prior.
pub fn pvi_fadeout_fit(
    data: &FeatureExpectations,
    n_eff: f64,
    spec: &HyperPriorSpec,
    config: &FitConfig,
) -> Result<FitReport> {
    MrfFit::new(data, n_eff, Method::Fadeout { spec: *spec }, config.clone())?.run()
}
