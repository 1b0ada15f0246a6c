//! Variational state and single-draw ELBO gradients.

use serde::{Deserialize, Serialize};

use super::likelihood::LikelihoodGradient;
use crate::error::{Error, Result};
use crate::prior::{hyperprior_grad, HyperPriorSpec, ScaleHierarchy, ScaleLayout};

pub const BLOCK_NAMES: [&str; 6] = ["mu_theta", "s_theta", "mu_log_sigma", "s_log_sigma", "mu_tau", "s_tau"];

/// Mean-field Gaussian parameters, means and log standard deviations per block.
///
/// `mu_theta`/`s_theta` hold the noncentered parameters under a scale-mixture
/// prior and the model parameters themselves for a plain Gaussian `q`, in which
/// case the scale blocks are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu_theta: Vec<f64>,
    pub s_theta: Vec<f64>,
    pub mu_log_sigma: Vec<f64>,
    pub s_log_sigma: Vec<f64>,
    pub mu_tau: Vec<f64>,
    pub s_tau: Vec<f64>,
}

impl VariationalState {
    /// Plain Gaussian `q` over `len` parameters.
    pub fn flat(len: usize, init_log_std: f64) -> Self {
        Self {
            mu_theta: vec![0.0; len],
            s_theta: vec![init_log_std; len],
            mu_log_sigma: Vec::new(),
            s_log_sigma: Vec::new(),
            mu_tau: Vec::new(),
            s_tau: Vec::new(),
        }
    }

    /// Noncentered state for `spec` over `layout`.
    pub fn fadeout(layout: &ScaleLayout, spec: &HyperPriorSpec, init_log_std: f64, init_log_sigma: f64) -> Self {
        let mut st = Self::flat(layout.num_params(), init_log_std);
        if spec.is_hierarchical() {
            st.mu_log_sigma = vec![init_log_sigma; layout.num_groups()];
            st.s_log_sigma = vec![init_log_std; layout.num_groups()];
            if spec.global.is_some() {
                st.mu_tau = vec![0.0; 2];
                st.s_tau = vec![init_log_std; 2];
            }
        }
        st
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Self {
            mu_theta: z(&self.mu_theta),
            s_theta: z(&self.s_theta),
            mu_log_sigma: z(&self.mu_log_sigma),
            s_log_sigma: z(&self.s_log_sigma),
            mu_tau: z(&self.mu_tau),
            s_tau: z(&self.s_tau),
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 6] {
        [
            &self.mu_theta,
            &self.s_theta,
            &self.mu_log_sigma,
            &self.s_log_sigma,
            &self.mu_tau,
            &self.s_tau,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.mu_theta,
            &mut self.s_theta,
            &mut self.mu_log_sigma,
            &mut self.s_log_sigma,
            &mut self.mu_tau,
            &mut self.s_tau,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    /// `self += w * other`, blockwise.
    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, b) in BLOCK_NAMES.iter().zip(self.blocks()) {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical { block: name.to_string(), iteration: 0 });
            }
        }
        Ok(())
    }
}

/// Prior used with a plain Gaussian `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlatPrior {
    /// Improper `p(theta) = const`.
    Flat,
    /// Independent `N(0, variance)` on every parameter.
    Gaussian { variance: f64 },
}

impl FlatPrior {
    pub fn add_gradient(&self, theta: &[f64], out: &mut [f64]) {
        if let FlatPrior::Gaussian { variance } = *self {
            out.iter_mut().zip(theta).for_each(|(g, t)| *g -= t / variance);
        }
    }

    /// Log density up to the normalizing constant.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match *self {
            FlatPrior::Flat => 0.0,
            FlatPrior::Gaussian { variance } => -0.5 * theta.iter().map(|t| t * t).sum::<f64>() / variance,
        }
    }
}

fn finite(block: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { block: block.into(), iteration: 0 })
    }
}

/// Single-draw pathwise gradient of the ELBO for a plain Gaussian `q`.
///
/// Returns `(grad_mu, grad_s)` with `theta = mu + exp(s) * eps`,
/// `grad_mu = G` and `grad_s = G * (theta - mu) + 1`, where `G` is the joint
/// log-density gradient at `theta`.
pub fn pathwise_grad_flat_q(
    likelihood: &mut dyn LikelihoodGradient,
    prior: &FlatPrior,
    mu: &[f64],
    s: &[f64],
    eps: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = likelihood.num_params();
    if mu.len() != k || s.len() != k || eps.len() != k {
        return Err(Error::Shape(format!(
            "draw of length {} for {} means and {} log-stds, model has {k}",
            eps.len(),
            mu.len(),
            s.len()
        )));
    }
    let theta: Vec<f64> = (0..k).map(|i| mu[i] + s[i].exp() * eps[i]).collect();
    let mut g = vec![0.0; k];
    likelihood.gradient(&theta, &mut g)?;
    prior.add_gradient(&theta, &mut g);
    finite("likelihood", &g)?;
    let gs = (0..k).map(|i| g[i] * (theta[i] - mu[i]) + 1.0).collect();
    Ok((g, gs))
}

/// Standard normal draws for the three Fadeout blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FadeoutDraws {
    /// Global log-scales.
    pub z1: Vec<f64>,
    /// Noncentered parameters.
    pub z2: Vec<f64>,
    /// Local log-scales.
    pub z3: Vec<f64>,
}

/// Per-parameter scale: `exp(log sigma)` broadcast over groups, or the fixed Gaussian scale.
fn parameter_scales(spec: &HyperPriorSpec, layout: &ScaleLayout, log_sigma: &[f64]) -> Vec<f64> {
    match spec.fixed_scale() {
        Some(s) => vec![s; layout.num_params()],
        None => layout.broadcast(&log_sigma.iter().map(|u| u.exp()).collect::<Vec<_>>()),
    }
}

/// Single-draw Fadeout gradient for all six blocks.
pub fn fadeout_grad(
    likelihood: &mut dyn LikelihoodGradient,
    state: &VariationalState,
    spec: &HyperPriorSpec,
    layout: &ScaleLayout,
    draws: &FadeoutDraws,
) -> Result<VariationalState> {
    let k = layout.num_params();
    if likelihood.num_params() != k
        || state.mu_theta.len() != k
        || draws.z1.len() != state.mu_tau.len()
        || draws.z2.len() != k
        || draws.z3.len() != state.mu_log_sigma.len()
    {
        return Err(Error::Shape("Fadeout draws, state and layout disagree".into()));
    }
    let reparam = |mu: &[f64], s: &[f64], z: &[f64]| -> Vec<f64> {
        mu.iter().zip(s).zip(z).map(|((m, s), z)| m + s.exp() * z).collect()
    };
    let tau = reparam(&state.mu_tau, &state.s_tau, &draws.z1);
    let theta_tilde = reparam(&state.mu_theta, &state.s_theta, &draws.z2);
    let log_sigma = reparam(&state.mu_log_sigma, &state.s_log_sigma, &draws.z3);
    let sigma = parameter_scales(spec, layout, &log_sigma);
    let theta: Vec<f64> = theta_tilde.iter().zip(&sigma).map(|(a, b)| a * b).collect();
    finite("theta", &theta)?;

    let mut lik = vec![0.0; k];
    likelihood.gradient(&theta, &mut lik)?;
    finite("likelihood", &lik)?;

    let mut grad = state.zeros_like();
    let s_grad = |s: &[f64], z: &[f64], g: &[f64]| -> Vec<f64> {
        s.iter().zip(z).zip(g).map(|((s, z), g)| s.exp() * z * g + 1.0).collect()
    };

    if spec.is_hierarchical() {
        let hyper = hyperprior_grad(spec, layout, &ScaleHierarchy { log_sigma: log_sigma.clone(), log_global: tau })?;
        grad.mu_tau = hyper.log_global;
        finite("mu_tau", &grad.mu_tau)?;
        grad.s_tau = s_grad(&state.s_tau, &draws.z1, &grad.mu_tau);
        finite("s_tau", &grad.s_tau)?;

        grad.mu_log_sigma = hyper.log_sigma;
        for (g, r) in layout.groups().enumerate() {
            grad.mu_log_sigma[g] += r.map(|i| theta[i] * lik[i]).sum::<f64>();
        }
        finite("mu_log_sigma", &grad.mu_log_sigma)?;
        grad.s_log_sigma = s_grad(&state.s_log_sigma, &draws.z3, &grad.mu_log_sigma);
        finite("s_log_sigma", &grad.s_log_sigma)?;
    }

    grad.mu_theta = (0..k).map(|i| sigma[i] * lik[i] - theta_tilde[i]).collect();
    finite("mu_theta", &grad.mu_theta)?;
    grad.s_theta = s_grad(&state.s_theta, &draws.z2, &grad.mu_theta);
    finite("s_theta", &grad.s_theta)?;
    Ok(grad)
}

/// Centered posterior mean `mu_theta * exp(mu_log_sigma + exp(2 s_log_sigma) / 2)`.
pub fn centered_estimate(state: &VariationalState, spec: &HyperPriorSpec, layout: &ScaleLayout) -> Vec<f64> {
    match spec.fixed_scale() {
        Some(s) => state.mu_theta.iter().map(|m| m * s).collect(),
        None => {
            let scale: Vec<f64> = state
                .mu_log_sigma
                .iter()
                .zip(&state.s_log_sigma)
                .map(|(m, s)| (m + 0.5 * (2.0 * s).exp()).exp())
                .collect();
            let scale = layout.broadcast(&scale);
            state.mu_theta.iter().zip(&scale).map(|(m, s)| m * s).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{Grouping, ScaleKind};
    use crate::vi::likelihood::FnLikelihood;
    use approx::assert_abs_diff_eq;

    fn zero_lik(k: usize) -> FnLikelihood<impl FnMut(&[f64], &mut [f64])> {
        FnLikelihood::new(k, |_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|g| *g = 0.0))
    }

    #[test]
    fn pathwise_at_zero_noise() {
        let mut lik = FnLikelihood::new(2, |t: &[f64], out: &mut [f64]| {
            out[0] = 1.0 - t[0];
            out[1] = -2.0 * t[1];
        });
        let (gm, gs) =
            pathwise_grad_flat_q(&mut lik, &FlatPrior::Flat, &[0.5, 1.0], &[-1.0, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(gm, vec![0.5, -2.0]);
        assert_eq!(gs, vec![1.0, 1.0]);
        let (_, gs) =
            pathwise_grad_flat_q(&mut zero_lik(2), &FlatPrior::Flat, &[0.5, 1.0], &[-1.0, 0.3], &[0.7, -2.0]).unwrap();
        assert_eq!(gs, vec![1.0, 1.0]);
    }

    #[test]
    fn fadeout_substitutions() {
        let layout = ScaleLayout::per_parameter(1, 3);
        let spec = HyperPriorSpec::horseshoe();
        let mut st = VariationalState::fadeout(&layout, &spec, -3.0, 0.0);
        st.mu_theta = vec![0.4, -0.2, 1.5];
        let mut lik = FnLikelihood::new(3, |t: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(t) {
                *o = 2.0 - v;
            }
        });
        let draws = FadeoutDraws { z1: vec![0.3, -0.1], z2: vec![0.0; 3], z3: vec![0.0; 3] };
        let g = fadeout_grad(&mut lik, &st, &spec, &layout, &draws).unwrap();
        // sigma = 1 and theta_tilde = mu_theta
        for i in 0..3 {
            assert_abs_diff_eq!(g.mu_theta[i], (2.0 - st.mu_theta[i]) - st.mu_theta[i], epsilon = 1e-15);
        }

        // zero likelihood: scale gradient is the hyperprior gradient alone
        let draws = FadeoutDraws { z1: vec![0.3, -0.1], z2: vec![0.5, 1.0, -1.0], z3: vec![0.2, 0.9, -0.4] };
        let g = fadeout_grad(&mut zero_lik(3), &st, &spec, &layout, &draws).unwrap();
        let tau: Vec<f64> = (0..2).map(|c| st.mu_tau[c] + st.s_tau[c].exp() * draws.z1[c]).collect();
        let u: Vec<f64> = (0..3).map(|g| st.mu_log_sigma[g] + st.s_log_sigma[g].exp() * draws.z3[g]).collect();
        let hyper = hyperprior_grad(&spec, &layout, &ScaleHierarchy { log_sigma: u, log_global: tau }).unwrap();
        assert_eq!(g.mu_log_sigma, hyper.log_sigma);
        assert_eq!(g.mu_tau, hyper.log_global);
    }

    #[test]
    fn centered_estimate_examples() {
        let layout = ScaleLayout::per_parameter(0, 3);
        let spec = HyperPriorSpec::horseshoe();
        let mut st = VariationalState::fadeout(&layout, &spec, -3.0, 0.0);
        st.mu_theta = vec![2.0, 1.0, 0.0];
        st.s_log_sigma = vec![-400.0, 0.0, 3.0];
        let est = centered_estimate(&st, &spec, &layout);
        assert_eq!(est[0], 2.0);
        assert_abs_diff_eq!(est[1], 1.6487, epsilon = 1e-4);
        assert_abs_diff_eq!(est[1], 0.5f64.exp(), epsilon = 1e-15);
        assert_eq!(est[2], 0.0);
    }

    #[test]
    fn group_scale_broadcasts_in_estimate() {
        let shape = crate::model::ModelShape::potts(2, 2).unwrap();
        let spec = HyperPriorSpec::group_horseshoe();
        let layout = ScaleLayout::new(&shape, Grouping::PairBlock);
        let mut st = VariationalState::fadeout(&layout, &spec, -3.0, 0.0);
        st.mu_theta = vec![1.0; 8];
        st.mu_log_sigma = vec![0.0, 0.0, 2f64.ln()];
        st.s_log_sigma = vec![-1e3; 3];
        let est = centered_estimate(&st, &spec, &layout);
        assert_eq!(est, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn gaussian_kind_has_no_scale_blocks() {
        let layout = ScaleLayout::per_parameter(0, 2);
        let spec = HyperPriorSpec::new(ScaleKind::GaussianFixed { lambda: 2.0 }, None, Grouping::PerParameter).unwrap();
        let st = VariationalState::fadeout(&layout, &spec, -3.0, -1.0);
        assert!(st.mu_log_sigma.is_empty() && st.mu_tau.is_empty());
        let draws = FadeoutDraws { z1: vec![], z2: vec![0.0, 0.0], z3: vec![] };
        let mut lik = FnLikelihood::new(2, |_: &[f64], out: &mut [f64]| out.copy_from_slice(&[1.0, -1.0]));
        let g = fadeout_grad(&mut lik, &st, &spec, &layout, &draws).unwrap();
        assert_eq!(g.mu_theta, vec![0.5, -0.5]);
    }

    #[test]
    fn non_finite_likelihood_names_block() {
        let layout = ScaleLayout::per_parameter(0, 1);
        let spec = HyperPriorSpec::horseshoe();
        let st = VariationalState::fadeout(&layout, &spec, -3.0, -1.0);
        let mut lik = FnLikelihood::new(1, |_: &[f64], out: &mut [f64]| out[0] = f64::NAN);
        let draws = FadeoutDraws { z1: vec![0.0; 2], z2: vec![0.0], z3: vec![0.0] };
        match fadeout_grad(&mut lik, &st, &spec, &layout, &draws) {
            Err(Error::Numerical { block, .. }) => assert_eq!(block, "likelihood"),
            other => panic!("{other:?}"),
        }
    }
}
