//! Penalized point estimates by accelerated proximal gradient.

use serde::{Deserialize, Serialize};

use super::pseudolikelihood::pl_eval;
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    L2,
    L1,
    /// Frobenius norm of each pair block.
    GroupL1,
}

/// Coupling penalty `lambda * R(J)` plus a fixed light ridge on fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub lambda: f64,
    #[serde(default = "default_field_l2")]
    pub field_l2: f64,
}

fn default_field_l2() -> f64 {
    0.01
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Self {
        Self { kind, lambda, field_l2: default_field_l2() }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.field_l2 >= 0.0) || self.lambda.is_nan() {
            return Err(Error::Config(format!(
                "regularization strengths must be non-negative, got lambda {} and field_l2 {}",
                self.lambda, self.field_l2
            )));
        }
        Ok(())
    }

    /// Smooth part: field ridge, plus the coupling ridge for `l2`. Adds to `grad`.
    pub(crate) fn smooth(&self, shape: ModelShape, theta: &[f64], grad: &mut [f64]) -> f64 {
        let nf = shape.num_fields();
        let mut v = 0.0;
        for k in 0..nf {
            v += self.field_l2 * theta[k] * theta[k];
            grad[k] += 2.0 * self.field_l2 * theta[k];
        }
        if self.kind == RegularizerKind::L2 {
            for k in nf..theta.len() {
                v += self.lambda * theta[k] * theta[k];
                grad[k] += 2.0 * self.lambda * theta[k];
            }
        }
        v
    }

    /// Non-smooth part.
    pub(crate) fn nonsmooth(&self, shape: ModelShape, theta: &[f64]) -> f64 {
        let nf = shape.num_fields();
        match self.kind {
            RegularizerKind::L2 => 0.0,
            RegularizerKind::L1 => self.lambda * theta[nf..].iter().map(|v| v.abs()).sum::<f64>(),
            RegularizerKind::GroupL1 => {
                self.lambda
                    * theta[nf..]
                        .chunks(shape.pair_block())
                        .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
                        .sum::<f64>()
            }
        }
    }

    /// Proximal map of `step * nonsmooth`, coordinate `k` scaled by `scale[k]` when given.
    pub(crate) fn prox(&self, shape: ModelShape, theta: &mut [f64], step: f64, scale: Option<&[f64]>) {
        let nf = shape.num_fields();
        let sc = |k: usize| scale.map_or(1.0, |s| s[k]);
        match self.kind {
            RegularizerKind::L2 => {}
            RegularizerKind::L1 => {
                for k in nf..theta.len() {
                    let t = step * self.lambda * sc(k);
                    theta[k] = theta[k].signum() * (theta[k].abs() - t).max(0.0);
                }
            }
            RegularizerKind::GroupL1 => {
                let bs = shape.pair_block();
                for (b, block) in theta[nf..].chunks_mut(bs).enumerate() {
                    let base = nf + b * bs;
                    let t = step * self.lambda * (0..bs).map(|k| sc(base + k)).sum::<f64>() / bs as f64;
                    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let keep = if norm > t { 1.0 - t / norm } else { 0.0 };
                    block.iter_mut().for_each(|v| *v *= keep);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once the relative objective change falls below this.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 5000, tolerance: 1e-8 }
    }
}

/// A penalized point estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub params: ModelParams,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// FISTA with backtracking and function-value restarts. Minimizes `f + g`.
pub(crate) fn fista(
    mut x: Vec<f64>,
    mut smooth: impl FnMut(&[f64], &mut [f64]) -> Result<f64>,
    nonsmooth: impl Fn(&[f64]) -> f64,
    prox: impl Fn(&mut [f64], f64),
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let n = x.len();
    let mut gy = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut fx = smooth(&x, &mut gy)? + nonsmooth(&x);
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut lip = 1.0;
    for it in 1..=opts.max_iterations {
        let fy = smooth(&y, &mut gy)?;
        let (p, fp) = loop {
            let mut p: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
            prox(&mut p, 1.0 / lip);
            let fp = smooth(&p, &mut gp)?;
            let mut lin = 0.0;
            let mut quad = 0.0;
            for k in 0..n {
                let d = p[k] - y[k];
                lin += gy[k] * d;
                quad += d * d;
            }
            if fp <= fy + lin + 0.5 * lip * quad + 1e-12 * fy.abs() {
                break (p, fp);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Numerical { block: "penalized objective".into(), iteration: it });
            }
        };
        let total = fp + nonsmooth(&p);
        if !total.is_finite() {
            return Err(Error::Numerical { block: "penalized objective".into(), iteration: it });
        }
        if total > fx {
            // momentum overshot: restart from the last iterate
            t = 1.0;
            y.copy_from_slice(&x);
            continue;
        }
        let rel = (fx - total).abs() / fx.abs().max(1.0);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        for k in 0..n {
            y[k] = p[k] + (t - 1.0) / t_next * (p[k] - x[k]);
        }
        x = p;
        fx = total;
        t = t_next;
        lip *= 0.9;
        if rel < opts.tolerance {
            return Ok((x, fx, it, true));
        }
    }
    Ok((x, fx, opts.max_iterations, false))
}

/// Maximizes `N_eff * PL(theta) - penalty`.
pub fn fit_pl(dataset: &WeightedDataset, reg: &RegularizerSpec, opts: &SolverOptions) -> Result<PointFit> {
    fit_pl_from(dataset, reg, opts, None)
}

/// As `fit_pl`, starting from `init`.
pub fn fit_pl_from(
    dataset: &WeightedDataset,
    reg: &RegularizerSpec,
    opts: &SolverOptions,
    init: Option<&ModelParams>,
) -> Result<PointFit> {
    reg.validate()?;
    let shape = dataset.shape();
    let n = dataset.n_eff();
    let x0 = match init {
        Some(p) => {
            crate::model::check_same_shape(p.shape(), shape)?;
            p.as_slice().to_vec()
        }
        None => vec![0.0; shape.num_params()],
    };
    let smooth = |theta: &[f64], grad: &mut [f64]| -> Result<f64> {
        let v = pl_eval(shape, theta, dataset, Some(grad))?;
        grad.iter_mut().for_each(|g| *g *= -n);
        Ok(-n * v + reg.smooth(shape, theta, grad))
    };
    finish(shape, fista(x0, smooth, |t| reg.nonsmooth(shape, t), |t, s| reg.prox(shape, t, s, None), opts)?, "pseudolikelihood")
}

pub(crate) fn finish(shape: ModelShape, out: (Vec<f64>, f64, usize, bool), what: &str) -> Result<PointFit> {
    let (x, objective, iterations, converged) = out;
    let warnings = if converged {
        Vec::new()
    } else {
        vec![format!("{what} fit stopped at the iteration cap ({iterations}) before converging")]
    };
    Ok(PointFit { params: ModelParams::from_vec(shape, x)?, objective, iterations, converged, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::gibbs_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn potts_data(seed: u64) -> WeightedDataset {
        let shape = ModelShape::potts(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..shape.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ModelParams::from_vec(shape, theta).unwrap();
        let rows = gibbs_sample(&p, 4, 100, 50, 2, seed).unwrap();
        WeightedDataset::new(shape, &rows).unwrap()
    }

    #[test]
    fn huge_l1_zeroes_couplings() {
        let ds = potts_data(0);
        let fit = fit_pl(&ds, &RegularizerSpec::new(RegularizerKind::L1, 1e6), &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.params.couplings().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_l1_is_blockwise() {
        let ds = potts_data(1);
        let fit = fit_pl(&ds, &RegularizerSpec::new(RegularizerKind::GroupL1, 8.0), &SolverOptions::default()).unwrap();
        let mut zero = 0;
        for block in fit.params.couplings().chunks(9) {
            let zeros = block.iter().filter(|v| **v == 0.0).count();
            assert!(zeros == 0 || zeros == 9, "{block:?}");
            zero += usize::from(zeros == 9);
        }
        assert!(zero > 0 && zero < 6, "{zero}");
    }

    #[test]
    fn recovers_ising_parameters_at_large_n() {
        let shape = ModelShape::ising(3).unwrap();
        let truth = ModelParams::from_vec(shape, vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2]).unwrap();
        let rows = gibbs_sample(&truth, 50, 100_000, 100, 3, 7).unwrap();
        let ds = WeightedDataset::new(shape, &rows).unwrap();
        let reg = RegularizerSpec { field_l2: 0.0, ..RegularizerSpec::new(RegularizerKind::L1, 0.0) };
        let fit = fit_pl(&ds, &reg, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.params.as_slice().iter().zip(truth.as_slice()) {
            assert!((a - b).abs() < 0.05, "{:?}", fit.params.as_slice());
        }
    }

    #[test]
    fn optimality_conditions_hold() {
        let ds = potts_data(3);
        let shape = ds.shape();
        let n = ds.n_eff();
        let kkt = |reg: RegularizerSpec| {
            let fit = fit_pl(&ds, &reg, &SolverOptions::default()).unwrap();
            assert!(fit.converged);
            let (_, g) = crate::baselines::pseudolikelihood(&fit.params, &ds).unwrap();
            let mut grad: Vec<f64> = g.iter().map(|v| -n * v).collect();
            reg.smooth(shape, fit.params.as_slice(), &mut grad);
            (fit, grad)
        };
        let (_, grad) = kkt(RegularizerSpec::new(RegularizerKind::L2, 1.0));
        let worst = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3 * n, "{worst}");
        // group lasso: zero blocks have gradient norm <= lambda, others gradient = -lambda * unit direction
        let lambda = 8.0;
        let (fit, grad) = kkt(RegularizerSpec::new(RegularizerKind::GroupL1, lambda));
        let nf = shape.num_fields();
        assert!(grad[..nf].iter().all(|v| v.abs() < 1e-3 * n));
        for (b, block) in fit.params.couplings().chunks(9).enumerate() {
            let g = &grad[nf + 9 * b..nf + 9 * (b + 1)];
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bn = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if bn == 0.0 {
                assert!(gn <= lambda * (1.0 + 1e-6), "{gn}");
            } else {
                for (gk, xk) in g.iter().zip(block) {
                    assert!((gk + lambda * xk / bn).abs() < 1e-2 * lambda, "{gk} vs {}", -lambda * xk / bn);
                }
            }
        }
    }

    #[test]
    fn rejects_negative_lambda() {
        let ds = potts_data(2);
        assert!(fit_pl(&ds, &RegularizerSpec::new(RegularizerKind::L2, -1.0), &SolverOptions::default()).is_err());
    }
}
