//! Finite-difference and enumeration checks of every analytic gradient and sampler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::{mpf_objective, pseudolikelihood, pseudolikelihood_value};
use crate::data::WeightedDataset;
use crate::error::Result;
use crate::model::{enumerate_distribution, sufficient_statistics, FeatureExpectations, ModelParams, ModelShape};
use crate::prior::{
    hyperprior_grad, log_hierarchy_density, GlobalPrior, Grouping, HyperPriorSpec, ScaleHierarchy, ScaleKind,
    ScaleLayout,
};
use crate::rng::{indexed_stream, streams};
use crate::sampler::{gibbs_sample, swendsen_wang_sample};
use crate::vi::{
    fadeout_grad, pathwise_grad_flat_q, FadeoutDraws, FlatPrior, LikelihoodGradient, MrfLikelihood, VariationalState,
    BLOCK_NAMES,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Analytic value against central differences; no randomness in the comparison.
    Deterministic,
    /// Monte Carlo estimate against an exact value, judged in standard errors.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub block: String,
    pub kind: CheckKind,
    pub instances: usize,
    /// Largest relative error (deterministic), or largest standard-error multiple
    /// divided by that instance's allowed multiple (stochastic).
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    /// Random instances per deterministic suite.
    pub instances: usize,
    /// Random instances per stochastic suite.
    pub sampler_instances: usize,
    /// Samples drawn per stochastic instance.
    pub sampler_samples: usize,
    /// Relative tolerance; stochastic thresholds scale with it from 3 s.e. at the default.
    pub tolerance: f64,
    pub seed: u64,
    /// Block whose analytic gradient is negated before comparison, to exercise failure reporting.
    pub inject_fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            sampler_instances: 3,
            sampler_samples: 20_000,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self, kind: CheckKind) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed && c.kind == kind).collect()
    }
}

/// Tracks the worst error per block of one suite.
struct Tally {
    suite: &'static str,
    blocks: Vec<(String, usize, f64)>,
}

impl Tally {
    fn new(suite: &'static str) -> Self {
        Self { suite, blocks: Vec::new() }
    }

    fn record(&mut self, block: &str, err: f64) {
        match self.blocks.iter_mut().find(|b| b.0 == block) {
            Some(b) => {
                b.1 += 1;
                b.2 = b.2.max(err);
            }
            None => self.blocks.push((block.to_string(), 1, err)),
        }
    }

    /// Smallest instance count among `blocks`; blocks never recorded count as zero.
    fn fewest(&self, blocks: &[&str]) -> usize {
        let count = |name: &str| self.blocks.iter().find(|b| b.0 == name).map_or(0, |b| b.1);
        blocks.iter().map(|b| count(b)).min().unwrap_or(0)
    }

    fn finish(self, kind: CheckKind, threshold: f64, out: &mut Vec<CheckResult>) {
        for (block, instances, worst) in self.blocks {
            out.push(CheckResult {
                suite: self.suite.to_string(),
                block,
                kind,
                instances,
                worst,
                threshold,
                passed: worst <= threshold,
            });
        }
    }
}

/// Worst relative disagreement between `analytic` and five-point central differences of `f` at `x`.
/// Entries smaller than 1e-2 are compared on an absolute scale.
pub fn finite_difference_error(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    let mut y = x.to_vec();
    let mut at = |y: &mut Vec<f64>, k: usize, v: f64| {
        y[k] = v;
        f(y)
    };
    for k in 0..x.len() {
        let h = 1e-3 * x[k].abs().max(1.0);
        let near = at(&mut y, k, x[k] + h) - at(&mut y, k, x[k] - h);
        let far = at(&mut y, k, x[k] + 2.0 * h) - at(&mut y, k, x[k] - 2.0 * h);
        y[k] = x[k];
        let fd = (8.0 * near - far) / (12.0 * h);
        let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-2);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}

fn random_shape(rng: &mut ChaCha8Rng, ising_only: bool) -> ModelShape {
    if ising_only || rng.random_bool(0.5) {
        ModelShape::ising(rng.random_range(2..=5)).expect("valid")
    } else {
        ModelShape::potts(rng.random_range(2..=3), rng.random_range(2..=3)).expect("valid")
    }
}

fn random_params(shape: ModelShape, rng: &mut ChaCha8Rng) -> ModelParams {
    let theta = (0..shape.num_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
    ModelParams::from_vec(shape, theta).expect("length matches")
}

fn random_dataset(shape: ModelShape, rng: &mut ChaCha8Rng) -> WeightedDataset {
    let n = rng.random_range(3..=10);
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| (0..shape.sites()).map(|_| rng.random_range(0..shape.states()) as u8).collect())
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    WeightedDataset::new(shape, &rows).and_then(|d| d.with_weights(weights)).expect("valid rows")
}

fn random_spec(rng: &mut ChaCha8Rng) -> HyperPriorSpec {
    let grouping = if rng.random_bool(0.5) { Grouping::PerParameter } else { Grouping::PairBlock };
    let kind = match rng.random_range(0..4) {
        0 => ScaleKind::GaussianFixed { lambda: rng.random_range(0.2..2.0) },
        1 => ScaleKind::Laplacian { lambda: rng.random_range(0.2..2.0) },
        2 => ScaleKind::StudentT { alpha: rng.random_range(0.5..3.0), beta: rng.random_range(0.2..2.0) },
        _ => ScaleKind::Horseshoe { scale: rng.random_range(0.2..2.0) },
    };
    let global = match (kind, rng.random_range(0..3)) {
        (ScaleKind::GaussianFixed { .. }, _) | (_, 0) => None,
        (_, 1) => Some(GlobalPrior::HalfCauchy { scale: rng.random_range(0.2..2.0) }),
        _ => Some(GlobalPrior::Exponential { rate: rng.random_range(0.2..2.0) }),
    };
    HyperPriorSpec::new(kind, global, grouping).expect("valid spec")
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn data_expectations(ds: &WeightedDataset) -> FeatureExpectations {
    ds.expectations()
}

fn maybe_fault(opts: &GradcheckOptions, block: &str, g: &mut [f64]) {
    if opts.inject_fault.as_deref() == Some(block) {
        g.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Runs every suite.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut checks = Vec::new();
    let tol = opts.tolerance;
    let mut k = 0u64;
    let mut next_rng = || {
        k += 1;
        indexed_stream(opts.seed, streams::GRADCHECK, k)
    };

    let mut t = Tally::new("exact_likelihood");
    for _ in 0..opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let params = random_params(shape, &mut rng);
        let ds = random_dataset(shape, &mut rng);
        let n = rng.random_range(1.0..20.0);
        let mut lik = MrfLikelihood::exact(&data_expectations(&ds), n)?;
        let mut g = vec![0.0; shape.num_params()];
        lik.gradient(params.as_slice(), &mut g)?;
        maybe_fault(opts, "likelihood", &mut g);
        let err = finite_difference_error(&mut |x| lik.log_likelihood_exact(x).unwrap_or(f64::NAN), params.as_slice(), &g);
        t.record("likelihood", err);
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    let mut t = Tally::new("pathwise_gaussian");
    for _ in 0..opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let ds = random_dataset(shape, &mut rng);
        let n = rng.random_range(1.0..20.0);
        let prior = if rng.random_bool(0.5) {
            FlatPrior::Flat
        } else {
            FlatPrior::Gaussian { variance: rng.random_range(0.5..4.0) }
        };
        let len = shape.num_params();
        let mu: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
        let s: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..-0.5)).collect();
        let eps = normals(len, &mut rng);
        let mut lik = MrfLikelihood::exact(&data_expectations(&ds), n)?;
        let (mut gm, mut gs) = pathwise_grad_flat_q(&mut lik, &prior, &mu, &s, &eps)?;
        maybe_fault(opts, "mu", &mut gm);
        maybe_fault(opts, "log_std", &mut gs);
        let objective = |mu: &[f64], s: &[f64]| {
            let theta: Vec<f64> = (0..len).map(|i| mu[i] + s[i].exp() * eps[i]).collect();
            lik.log_likelihood_exact(&theta).unwrap_or(f64::NAN) + prior.log_density(&theta) + s.iter().sum::<f64>()
        };
        let err = finite_difference_error(&mut |x| objective(x, &s), &mu, &gm);
        t.record("mu", err);
        let err = finite_difference_error(&mut |x| objective(&mu, x), &s, &gs);
        t.record("log_std", err);
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    let mut t = Tally::new("fadeout");
    while t.fewest(&BLOCK_NAMES) < opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let ds = random_dataset(shape, &mut rng);
        let n = rng.random_range(1.0..20.0);
        let spec = random_spec(&mut rng);
        let layout = ScaleLayout::new(&shape, spec.grouping);
        let mut state = VariationalState::fadeout(&layout, &spec, -1.0, -1.0);
        for b in state.blocks_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..0.5));
        }
        let draws = FadeoutDraws {
            z1: normals(state.mu_tau.len(), &mut rng),
            z2: normals(state.mu_theta.len(), &mut rng),
            z3: normals(state.mu_log_sigma.len(), &mut rng),
        };
        let mut lik = MrfLikelihood::exact(&data_expectations(&ds), n)?;
        let mut grad = fadeout_grad(&mut lik, &state, &spec, &layout, &draws)?;
        for (name, b) in BLOCK_NAMES.iter().zip(grad.blocks_mut()) {
            maybe_fault(opts, name, b);
        }
        let flat = state.to_flat();
        let objective = |x: &[f64]| {
            let mut st = state.clone();
            st.set_from_flat(x);
            fadeout_objective(&lik, &st, &spec, &layout, &draws).unwrap_or(f64::NAN)
        };
        // per-block errors from one pass over the flat vector
        let analytic = grad.to_flat();
        let mut offset = 0;
        for (name, b) in BLOCK_NAMES.iter().zip(state.blocks()) {
            let len = b.len();
            if len > 0 {
                let mut sub = |y: &[f64]| {
                    let mut x = flat.clone();
                    x[offset..offset + len].copy_from_slice(y);
                    objective(&x)
                };
                let err = finite_difference_error(&mut sub, &flat[offset..offset + len], &analytic[offset..offset + len]);
                t.record(name, err);
            }
            offset += len;
        }
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    let mut t = Tally::new("pseudolikelihood");
    for _ in 0..opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let params = random_params(shape, &mut rng);
        let ds = random_dataset(shape, &mut rng);
        let (_, mut g) = pseudolikelihood(&params, &ds)?;
        maybe_fault(opts, "pseudolikelihood", &mut g);
        let mut f = |x: &[f64]| {
            let p = ModelParams::from_vec(shape, x.to_vec()).expect("length");
            pseudolikelihood_value(&p, &ds).unwrap_or(f64::NAN)
        };
        t.record("pseudolikelihood", finite_difference_error(&mut f, params.as_slice(), &g));
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    let mut t = Tally::new("mpf");
    for _ in 0..opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, true);
        let params = random_params(shape, &mut rng);
        let ds = random_dataset(shape, &mut rng);
        let (_, mut g) = mpf_objective(&params, &ds)?;
        maybe_fault(opts, "mpf", &mut g);
        let mut f = |x: &[f64]| {
            let p = ModelParams::from_vec(shape, x.to_vec()).expect("length");
            mpf_objective(&p, &ds).map(|r| r.0).unwrap_or(f64::NAN)
        };
        t.record("mpf", finite_difference_error(&mut f, params.as_slice(), &g));
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    let mut t = Tally::new("hyperprior");
    while t.fewest(&["log_sigma", "log_global"]) < opts.instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let mut spec = random_spec(&mut rng);
        if !spec.is_hierarchical() {
            spec = HyperPriorSpec::horseshoe();
        }
        let layout = ScaleLayout::new(&shape, spec.grouping);
        let h = ScaleHierarchy {
            log_sigma: (0..layout.num_groups()).map(|_| rng.random_range(-3.0..2.0)).collect(),
            log_global: if spec.global.is_some() {
                vec![rng.random_range(-2.0..1.0), rng.random_range(-2.0..1.0)]
            } else {
                Vec::new()
            },
        };
        let mut g = hyperprior_grad(&spec, &layout, &h)?;
        maybe_fault(opts, "log_sigma", &mut g.log_sigma);
        maybe_fault(opts, "log_global", &mut g.log_global);
        let mut f = |x: &[f64]| {
            let hh = ScaleHierarchy { log_sigma: x.to_vec(), log_global: h.log_global.clone() };
            log_hierarchy_density(&spec, &layout, &hh).unwrap_or(f64::NAN)
        };
        t.record("log_sigma", finite_difference_error(&mut f, &h.log_sigma, &g.log_sigma));
        if !h.log_global.is_empty() {
            let mut f = |x: &[f64]| {
                let hh = ScaleHierarchy { log_sigma: h.log_sigma.clone(), log_global: x.to_vec() };
                log_hierarchy_density(&spec, &layout, &hh).unwrap_or(f64::NAN)
            };
            t.record("log_global", finite_difference_error(&mut f, &h.log_global, &g.log_global));
        }
    }
    t.finish(CheckKind::Deterministic, tol, &mut checks);

    // stochastic suites: 3 standard errors at the default tolerance, Bonferroni over features
    let scale = tol / DEFAULT_TOLERANCE;
    let mut gibbs = Tally::new("gibbs_enumeration");
    let mut sw = Tally::new("swendsen_wang_enumeration");
    for _ in 0..opts.sampler_instances {
        let mut rng = next_rng();
        let shape = random_shape(&mut rng, false);
        let params = random_params(shape, &mut rng);
        let seed = rng.random();
        let exact = enumerate_distribution(&params)?.expectations();
        let z_thr = bonferroni_threshold(exact.as_slice().len()) * scale;
        let rows = gibbs_sample(&params, 50, opts.sampler_samples, 100, 2, seed)?;
        gibbs.record("moments", standard_error_multiple(&params, &rows, 50, &exact)? / z_thr);
        if shape.is_ising() {
            let rows = swendsen_wang_sample(&params, opts.sampler_samples, 2, seed)?;
            sw.record("moments", standard_error_multiple(&params, &rows, 50, &exact)? / z_thr);
        }
    }
    gibbs.finish(CheckKind::Stochastic, 1.0, &mut checks);
    sw.finish(CheckKind::Stochastic, 1.0, &mut checks);
    Ok(GradcheckReport { checks })
}

/// Two-sided normal quantile matching the single-test level of 3 s.e., split over `tests` comparisons.
pub fn bonferroni_threshold(tests: usize) -> f64 {
    let level = 2.0 * (1.0 - Normal::standard().cdf(3.0));
    Normal::standard().inverse_cdf(1.0 - level / (2.0 * tests.max(1) as f64))
}

/// Largest `|mean - exact| / se` over features, with batch-means standard errors from
/// `batches` contiguous batches.
pub fn standard_error_multiple(
    params: &ModelParams,
    rows: &[Vec<u8>],
    batches: usize,
    exact: &FeatureExpectations,
) -> Result<f64> {
    let shape = params.shape();
    let k = exact.as_slice().len();
    let per = rows.len() / batches;
    let mut means = vec![vec![0.0; k]; batches];
    for (b, m) in means.iter_mut().enumerate() {
        for x in &rows[b * per..(b + 1) * per] {
            let f = sufficient_statistics(&shape, x)?;
            for (a, v) in m.iter_mut().zip(f.as_slice()) {
                *a += v / per as f64;
            }
        }
    }
    let mut worst = 0.0f64;
    for j in 0..k {
        let mean = means.iter().map(|m| m[j]).sum::<f64>() / batches as f64;
        let var = means.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        let diff = (mean - exact.as_slice()[j]).abs();
        let z = if se > 0.0 { diff / se } else if diff < 1e-12 { 0.0 } else { f64::INFINITY };
        worst = worst.max(z);
    }
    Ok(worst)
}

/// Per-draw Fadeout objective whose exact gradient the six blocks estimate:
/// `log p(D | theta) - |theta_tilde|^2 / 2 + log p(u, tau) + sum of log-stds`.
pub fn fadeout_objective(
    lik: &MrfLikelihood,
    state: &VariationalState,
    spec: &HyperPriorSpec,
    layout: &ScaleLayout,
    draws: &FadeoutDraws,
) -> Result<f64> {
    let draw = |mu: &[f64], s: &[f64], z: &[f64]| -> Vec<f64> {
        mu.iter().zip(s).zip(z).map(|((m, s), z)| m + s.exp() * z).collect()
    };
    let tau = draw(&state.mu_tau, &state.s_tau, &draws.z1);
    let tt = draw(&state.mu_theta, &state.s_theta, &draws.z2);
    let u = draw(&state.mu_log_sigma, &state.s_log_sigma, &draws.z3);
    let sigma = match spec.fixed_scale() {
        Some(s) => vec![s; tt.len()],
        None => layout.broadcast(&u.iter().map(|v| v.exp()).collect::<Vec<_>>()),
    };
    let theta: Vec<f64> = tt.iter().zip(&sigma).map(|(a, b)| a * b).collect();
    let mut total = lik.log_likelihood_exact(&theta)? - 0.5 * tt.iter().map(|v| v * v).sum::<f64>();
    if spec.is_hierarchical() {
        total += log_hierarchy_density(spec, layout, &ScaleHierarchy { log_sigma: u, log_global: tau })?;
    }
    total += state.s_theta.iter().chain(&state.s_log_sigma).chain(&state.s_tau).sum::<f64>();
    Ok(total)
}
