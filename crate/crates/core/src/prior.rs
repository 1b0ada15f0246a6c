//! Scale-mixture hyperpriors and the noncentered parameterization.
//!
//! Every density here is expressed over `u = log sigma`. When a global layer
//! is present the local density is conditioned on the global log-scale `tau`
//! by a shift, `log p(u | tau) = log p0(u - tau)`, so `sigma = exp(tau) * sigma0`.

use std::f64::consts::{FRAC_2_PI, LN_2};
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::ModelShape;

/// Mixing density over the local scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleKind {
    /// Fixed variance `1 / (2 lambda)`, no scale hierarchy.
    GaussianFixed { lambda: f64 },
    /// `sigma^2 ~ Exponential(lambda)`.
    Laplacian { lambda: f64 },
    /// `sigma^2 ~ InverseGamma(alpha, beta)`.
    StudentT { alpha: f64, beta: f64 },
    /// `sigma ~ HalfCauchy(0, scale)`.
    Horseshoe { scale: f64 },
}

/// Prior over a global log-scale `tau = log s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalPrior {
    /// `s ~ HalfCauchy(0, scale)`.
    HalfCauchy { scale: f64 },
    /// `s ~ Exponential(rate)`.
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One scale per parameter.
    PerParameter,
    /// One scale per `q x q` coupling block and per site field vector.
    PairBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct HyperPriorSpec {
    pub kind: ScaleKind,
    pub global: Option<GlobalPrior>,
    pub grouping: Grouping,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    kind: String,
    #[serde(default = "none_string")]
    global: String,
    #[serde(default = "per_parameter")]
    grouping: Grouping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    global_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    global_rate: Option<f64>,
}

fn none_string() -> String {
    "none".into()
}

fn per_parameter() -> Grouping {
    Grouping::PerParameter
}

impl TryFrom<SpecRepr> for HyperPriorSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let kind = match r.kind.as_str() {
            "gaussian" => ScaleKind::GaussianFixed { lambda: r.lambda.unwrap_or(0.5) },
            "laplacian" => ScaleKind::Laplacian { lambda: r.lambda.unwrap_or(1.0) },
            "student_t" => ScaleKind::StudentT {
                alpha: r.alpha.unwrap_or(1.0),
                beta: r.beta.unwrap_or(1.0),
            },
            "horseshoe" => ScaleKind::Horseshoe { scale: r.scale.unwrap_or(1.0) },
            other => return Err(Error::Config(format!("unknown hyperprior kind {other:?}"))),
        };
        let global = match r.global.as_str() {
            "none" => None,
            "half_cauchy" => Some(GlobalPrior::HalfCauchy { scale: r.global_scale.unwrap_or(1.0) }),
            "exponential" => Some(GlobalPrior::Exponential { rate: r.global_rate.unwrap_or(1.0) }),
            other => return Err(Error::Config(format!("unknown global prior {other:?}"))),
        };
        let spec = HyperPriorSpec { kind, global, grouping: r.grouping };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<HyperPriorSpec> for SpecRepr {
    fn from(s: HyperPriorSpec) -> Self {
        let mut r = SpecRepr {
            kind: String::new(),
            global: none_string(),
            grouping: s.grouping,
            lambda: None,
            alpha: None,
            beta: None,
            scale: None,
            global_scale: None,
            global_rate: None,
        };
        match s.kind {
            ScaleKind::GaussianFixed { lambda } => {
                r.kind = "gaussian".into();
                r.lambda = Some(lambda);
            }
            ScaleKind::Laplacian { lambda } => {
                r.kind = "laplacian".into();
                r.lambda = Some(lambda);
            }
            ScaleKind::StudentT { alpha, beta } => {
                r.kind = "student_t".into();
                r.alpha = Some(alpha);
                r.beta = Some(beta);
            }
            ScaleKind::Horseshoe { scale } => {
                r.kind = "horseshoe".into();
                r.scale = Some(scale);
            }
        }
        match s.global {
            None => {}
            Some(GlobalPrior::HalfCauchy { scale }) => {
                r.global = "half_cauchy".into();
                r.global_scale = Some(scale);
            }
            Some(GlobalPrior::Exponential { rate }) => {
                r.global = "exponential".into();
                r.global_rate = Some(rate);
            }
        }
        r
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-density and derivative of a Half-Cauchy(0, s) scale over its log.
fn half_cauchy_log(u: f64, s: f64) -> (f64, f64) {
    let v = u - s.ln();
    (FRAC_2_PI.ln() + v - softplus(2.0 * v), -v.tanh())
}

impl HyperPriorSpec {
    pub fn new(kind: ScaleKind, global: Option<GlobalPrior>, grouping: Grouping) -> Result<Self> {
        let spec = Self { kind, global, grouping };
        spec.validate()?;
        Ok(spec)
    }

    /// Horseshoe locals under a standard Half-Cauchy global, one scale per parameter.
    pub fn horseshoe() -> Self {
        Self {
            kind: ScaleKind::Horseshoe { scale: 1.0 },
            global: Some(GlobalPrior::HalfCauchy { scale: 1.0 }),
            grouping: Grouping::PerParameter,
        }
    }

    /// Horseshoe with one scale per pair block.
    pub fn group_horseshoe() -> Self {
        Self { grouping: Grouping::PairBlock, ..Self::horseshoe() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("hyperparameter {name} must be positive, got {v}")))
            }
        };
        match self.kind {
            ScaleKind::GaussianFixed { lambda } | ScaleKind::Laplacian { lambda } => positive("lambda", lambda)?,
            ScaleKind::StudentT { alpha, beta } => {
                positive("alpha", alpha)?;
                positive("beta", beta)?;
            }
            ScaleKind::Horseshoe { scale } => positive("scale", scale)?,
        }
        match self.global {
            None => {}
            Some(GlobalPrior::HalfCauchy { scale }) => positive("global scale", scale)?,
            Some(GlobalPrior::Exponential { rate }) => positive("global rate", rate)?,
        }
        if !self.is_hierarchical() && self.global.is_some() {
            return Err(Error::Config("a fixed-scale Gaussian prior takes no global layer".into()));
        }
        Ok(())
    }

    /// False for the fixed-scale Gaussian, which has no scale variables.
    pub fn is_hierarchical(&self) -> bool {
        !matches!(self.kind, ScaleKind::GaussianFixed { .. })
    }

    /// The fixed standard deviation of the Gaussian kind.
    pub fn fixed_scale(&self) -> Option<f64> {
        match self.kind {
            ScaleKind::GaussianFixed { lambda } => Some((0.5 / lambda).sqrt()),
            _ => None,
        }
    }

    /// `log p(u - tau)` and its derivative in `u`.
    pub fn local_log_density(&self, log_sigma: f64, tau: f64) -> (f64, f64) {
        let u = log_sigma - tau;
        match self.kind {
            ScaleKind::GaussianFixed { .. } => (0.0, 0.0),
            ScaleKind::Laplacian { lambda } => {
                let e = (2.0 * u).exp();
                (LN_2 + lambda.ln() + 2.0 * u - lambda * e, 2.0 - 2.0 * lambda * e)
            }
            ScaleKind::StudentT { alpha, beta } => {
                let e = (-2.0 * u).exp();
                (
                    LN_2 + alpha * beta.ln() - ln_gamma(alpha) - beta * e - 2.0 * alpha * u,
                    2.0 * beta * e - 2.0 * alpha,
                )
            }
            ScaleKind::Horseshoe { scale } => half_cauchy_log(u, scale),
        }
    }

    /// Log prior of a global log-scale and its derivative.
    pub fn global_log_density(&self, tau: f64) -> (f64, f64) {
        match self.global {
            None => (0.0, 0.0),
            Some(GlobalPrior::HalfCauchy { scale }) => half_cauchy_log(tau, scale),
            Some(GlobalPrior::Exponential { rate }) => {
                let e = tau.exp();
                (rate.ln() + tau - rate * e, 1.0 - rate * e)
            }
        }
    }

    /// Draws `sigma0` from the local mixing density (global scale 1).
    fn sample_local_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ScaleKind::GaussianFixed { lambda } => (0.5 / lambda).sqrt(),
            ScaleKind::Laplacian { lambda } => Exp::new(lambda).expect("validated").sample(rng).sqrt(),
            ScaleKind::StudentT { alpha, beta } => {
                let g: f64 = Gamma::new(alpha, 1.0 / beta).expect("validated").sample(rng);
                (1.0 / g).sqrt()
            }
            ScaleKind::Horseshoe { scale } => half_cauchy_draw(rng, scale),
        }
    }

    fn sample_global_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.global {
            None => 1.0,
            Some(GlobalPrior::HalfCauchy { scale }) => half_cauchy_draw(rng, scale),
            Some(GlobalPrior::Exponential { rate }) => Exp::new(rate).expect("validated").sample(rng),
        }
    }
}

fn half_cauchy_draw<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    scale * (std::f64::consts::FRAC_PI_2 * rng.random::<f64>()).tan()
}

/// `log p(log sigma | tau)` for one local scale.
///
/// `conditioning` is the global log-scale; pass 0 when there is no global layer.
pub fn log_hyperprior_density(spec: &HyperPriorSpec, log_sigma: f64, conditioning: f64) -> Result<f64> {
    if !log_sigma.is_finite() || !conditioning.is_finite() {
        return Err(Error::Domain(format!(
            "log-scale must be finite, got {log_sigma} given {conditioning}"
        )));
    }
    Ok(spec.local_log_density(log_sigma, conditioning).0)
}

/// Parameter class of a scale group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Fields = 0,
    Couplings = 1,
}

/// Partition of the flat parameter vector into contiguous scale groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLayout {
    bounds: Vec<usize>,
    field_groups: usize,
}

impl ScaleLayout {
    pub fn new(shape: &ModelShape, grouping: Grouping) -> Self {
        match grouping {
            Grouping::PerParameter => Self::per_parameter(shape.num_fields(), shape.num_params()),
            Grouping::PairBlock => {
                let fb = shape.field_block();
                let pb = shape.pair_block();
                let mut bounds = vec![0];
                bounds.extend((1..=shape.sites()).map(|i| i * fb));
                let nf = shape.num_fields();
                bounds.extend((1..=shape.num_pairs()).map(|p| nf + p * pb));
                Self { bounds, field_groups: shape.sites() }
            }
        }
    }

    /// One group per parameter, the first `num_fields` of which are fields.
    pub fn per_parameter(num_fields: usize, num_params: usize) -> Self {
        Self { bounds: (0..=num_params).collect(), field_groups: num_fields }
    }

    pub fn num_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn num_params(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn group(&self, g: usize) -> Range<usize> {
        self.bounds[g]..self.bounds[g + 1]
    }

    pub fn groups(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.bounds.windows(2).map(|w| w[0]..w[1])
    }

    pub fn class_of(&self, g: usize) -> ParamClass {
        if g < self.field_groups {
            ParamClass::Fields
        } else {
            ParamClass::Couplings
        }
    }

    /// Expands one value per group into one value per parameter.
    pub fn broadcast(&self, per_group: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (g, r) in self.groups().enumerate() {
            out.extend(std::iter::repeat_n(per_group[g], r.len()));
        }
        out
    }
}

/// Local log-scales per group and one global log-scale per parameter class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleHierarchy {
    pub log_sigma: Vec<f64>,
    /// `[fields, couplings]`, or empty without a global layer.
    pub log_global: Vec<f64>,
}

impl ScaleHierarchy {
    pub fn global_for(&self, class: ParamClass) -> f64 {
        self.log_global.get(class as usize).copied().unwrap_or(0.0)
    }
}

fn check_scales(sigma: &[f64], layout: &ScaleLayout, len: usize) -> Result<()> {
    if sigma.len() != layout.num_groups() || len != layout.num_params() {
        return Err(Error::Shape(format!(
            "{} parameters and {} scales do not fit a layout of {} parameters in {} groups",
            len,
            sigma.len(),
            layout.num_params(),
            layout.num_groups()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Domain(format!("scales must be positive and finite, got {s}")));
    }
    Ok(())
}

/// `theta / sigma` with each group scale broadcast over its block.
pub fn noncenter(theta: &[f64], sigma: &[f64], layout: &ScaleLayout) -> Result<Vec<f64>> {
    check_scales(sigma, layout, theta.len())?;
    let mut out = theta.to_vec();
    for (g, r) in layout.groups().enumerate() {
        out[r].iter_mut().for_each(|t| *t /= sigma[g]);
    }
    Ok(out)
}

/// `theta_tilde * sigma` with each group scale broadcast over its block.
pub fn recenter(theta_tilde: &[f64], sigma: &[f64], layout: &ScaleLayout) -> Result<Vec<f64>> {
    check_scales(sigma, layout, theta_tilde.len())?;
    let mut out = theta_tilde.to_vec();
    for (g, r) in layout.groups().enumerate() {
        out[r].iter_mut().for_each(|t| *t *= sigma[g]);
    }
    Ok(out)
}

fn check_hierarchy(spec: &HyperPriorSpec, layout: &ScaleLayout, h: &ScaleHierarchy) -> Result<()> {
    let globals = if spec.global.is_some() { 2 } else { 0 };
    if h.log_sigma.len() != layout.num_groups() || h.log_global.len() != globals {
        return Err(Error::Shape(format!(
            "hierarchy has {} local and {} global scales, expected {} and {}",
            h.log_sigma.len(),
            h.log_global.len(),
            layout.num_groups(),
            globals
        )));
    }
    Ok(())
}

/// Joint log density of the scale hierarchy.
pub fn log_hierarchy_density(spec: &HyperPriorSpec, layout: &ScaleLayout, h: &ScaleHierarchy) -> Result<f64> {
    check_hierarchy(spec, layout, h)?;
    let mut total: f64 = h.log_global.iter().map(|&t| spec.global_log_density(t).0).sum();
    for (g, &u) in h.log_sigma.iter().enumerate() {
        total += spec.local_log_density(u, h.global_for(layout.class_of(g))).0;
    }
    Ok(total)
}

/// Gradient of [`log_hierarchy_density`] with respect to every local and global log-scale.
pub fn hyperprior_grad(spec: &HyperPriorSpec, layout: &ScaleLayout, h: &ScaleHierarchy) -> Result<ScaleHierarchy> {
    check_hierarchy(spec, layout, h)?;
    let mut grad = ScaleHierarchy {
        log_sigma: vec![0.0; h.log_sigma.len()],
        log_global: h.log_global.iter().map(|&t| spec.global_log_density(t).1).collect(),
    };
    for (g, &u) in h.log_sigma.iter().enumerate() {
        let class = layout.class_of(g);
        let d = spec.local_log_density(u, h.global_for(class)).1;
        grad.log_sigma[g] = d;
        if let Some(t) = grad.log_global.get_mut(class as usize) {
            *t -= d;
        }
    }
    Ok(grad)
}

/// A draw from the prior: scales, noncentered parameters and their centered image.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub hierarchy: ScaleHierarchy,
    pub theta_tilde: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Samples the full hierarchy. For the fixed-scale Gaussian `log_sigma` holds the fixed scale.
pub fn sample_prior<R: Rng + ?Sized>(spec: &HyperPriorSpec, layout: &ScaleLayout, rng: &mut R) -> PriorDraw {
    let globals: Vec<f64> = if spec.global.is_some() {
        (0..2).map(|_| spec.sample_global_scale(rng).ln()).collect()
    } else {
        Vec::new()
    };
    let hierarchy = ScaleHierarchy {
        log_sigma: (0..layout.num_groups())
            .map(|g| {
                let tau = globals.get(layout.class_of(g) as usize).copied().unwrap_or(0.0);
                spec.sample_local_scale(rng).ln() + tau
            })
            .collect(),
        log_global: globals,
    };
    let theta_tilde: Vec<f64> = (0..layout.num_params()).map(|_| rng.sample(StandardNormal)).collect();
    let sigma: Vec<f64> = hierarchy.log_sigma.iter().map(|u| u.exp()).collect();
    let mut theta = theta_tilde.clone();
    for (g, r) in layout.groups().enumerate() {
        theta[r].iter_mut().for_each(|t| *t *= sigma[g]);
    }
    PriorDraw { hierarchy, theta_tilde, theta }
}
