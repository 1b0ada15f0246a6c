//! Ising and Potts models in log-linear form.
//!
//! Parameters, gradients and feature expectations share one flat layout:
//! sitewise fields first (`D` entries for Ising, `D*q` for Potts, site-major),
//! then one coupling block per unordered pair `i < j` in lexicographic pair
//! order. Potts blocks are `q*q`, row-major in `(state_i, state_j)`.
//!
//! Configurations are slices of `u8` states in `0..q`. For Ising models state
//! `0` is spin `-1` and state `1` is spin `+1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of configurations [`enumerate_distribution`] will visit.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Signed spins, one field and one coupling per pair.
    Ising,
    /// Categorical states with indicator features.
    Potts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ShapeRepr")]
pub struct ModelShape {
    kind: ModelKind,
    sites: usize,
    states: usize,
}

#[derive(Deserialize)]
struct ShapeRepr {
    kind: ModelKind,
    sites: usize,
    states: usize,
}

impl TryFrom<ShapeRepr> for ModelShape {
    type Error = Error;

    fn try_from(r: ShapeRepr) -> Result<Self> {
        match r.kind {
            ModelKind::Ising if r.states != 2 => Err(Error::Shape(format!(
                "Ising models have 2 states, got {}",
                r.states
            ))),
            ModelKind::Ising => ModelShape::ising(r.sites),
            ModelKind::Potts => ModelShape::potts(r.sites, r.states),
        }
    }
}

impl ModelShape {
    pub fn ising(sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::Shape("a model needs at least one site".into()));
        }
        Ok(Self {
            kind: ModelKind::Ising,
            sites,
            states: 2,
        })
    }

    pub fn potts(sites: usize, states: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::Shape("a model needs at least one site".into()));
        }
        if !(2..=u8::MAX as usize).contains(&states) {
            return Err(Error::Shape(format!("Potts states must be in 2..=255, got {states}")));
        }
        Ok(Self {
            kind: ModelKind::Potts,
            sites,
            states,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_ising(&self) -> bool {
        self.kind == ModelKind::Ising
    }

    /// Number of variables `D`.
    pub fn sites(&self) -> usize {
        self.sites
    }

    /// States per variable `q`.
    pub fn states(&self) -> usize {
        self.states
    }

    /// Entries per site in the field section.
    pub fn field_block(&self) -> usize {
        match self.kind {
            ModelKind::Ising => 1,
            ModelKind::Potts => self.states,
        }
    }

    /// Entries per pair in the coupling section.
    pub fn pair_block(&self) -> usize {
        match self.kind {
            ModelKind::Ising => 1,
            ModelKind::Potts => self.states * self.states,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.sites * (self.sites - 1) / 2
    }

    pub fn num_fields(&self) -> usize {
        self.sites * self.field_block()
    }

    pub fn num_couplings(&self) -> usize {
        self.num_pairs() * self.pair_block()
    }

    pub fn num_params(&self) -> usize {
        self.num_fields() + self.num_couplings()
    }

    /// Lexicographic index of the pair `(i, j)`, `i < j`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.sites);
        i * self.sites - i * (i + 1) / 2 + (j - i - 1)
    }

    /// All pairs `(i, j)` with `i < j` in layout order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.sites;
        (0..d).flat_map(move |i| (i + 1..d).map(move |j| (i, j)))
    }

    /// Offset of the field entry for site `i` in state `a` (Ising ignores `a`).
    pub fn field_offset(&self, i: usize, a: usize) -> usize {
        match self.kind {
            ModelKind::Ising => i,
            ModelKind::Potts => i * self.states + a,
        }
    }

    /// Offset of the first entry of the coupling block for pair index `p`.
    pub fn pair_offset(&self, p: usize) -> usize {
        self.num_fields() + p * self.pair_block()
    }

    /// Value of an Ising state as a spin.
    pub fn spin(state: u8) -> f64 {
        if state == 0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Total number of configurations, `q^D`, saturating at `u128::MAX`.
    pub fn num_configurations(&self) -> u128 {
        (self.states as u128)
            .checked_pow(self.sites as u32)
            .unwrap_or(u128::MAX)
    }

    /// Checks that `x` is a valid configuration for this shape.
    pub fn check_configuration(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.sites {
            return Err(Error::Shape(format!(
                "configuration has {} entries, model has {} sites",
                x.len(),
                self.sites
            )));
        }
        if let Some((i, &s)) = x.iter().enumerate().find(|(_, &s)| s as usize >= self.states) {
            return Err(Error::Domain(format!(
                "site {i} has state {s}, outside 0..{}",
                self.states
            )));
        }
        Ok(())
    }

    fn check_layout(&self, len: usize, what: &str) -> Result<()> {
        if len != self.num_params() {
            return Err(Error::Shape(format!(
                "{what} has {len} entries, layout needs {}",
                self.num_params()
            )));
        }
        Ok(())
    }
}

/// Converts signed spins (`-1`/`+1`) to Ising states.
pub fn spins_to_states(spins: &[i8]) -> Vec<u8> {
    spins.iter().map(|&s| u8::from(s > 0)).collect()
}

/// Fields `h` and couplings `J` of an Ising or Potts model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ModelParams {
    shape: ModelShape,
    values: Vec<f64>,
}

/// On-disk form: `{"shape": ..., "h": [...], "J": [...]}` in layout order.
#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    shape: ModelShape,
    h: Vec<f64>,
    #[serde(rename = "J")]
    j: Vec<f64>,
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        ModelParams::from_parts(r.shape, &r.h, &r.j)
    }
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        ParamsRepr {
            shape: p.shape,
            h: p.fields().to_vec(),
            j: p.couplings().to_vec(),
        }
    }
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    /// Wraps a flat parameter vector in layout order.
    pub fn from_vec(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        shape.check_layout(values.len(), "parameter vector")?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("parameter {k} is not finite")));
        }
        Ok(Self { shape, values })
    }

    pub fn from_parts(shape: ModelShape, h: &[f64], j: &[f64]) -> Result<Self> {
        if h.len() != shape.num_fields() || j.len() != shape.num_couplings() {
            return Err(Error::Shape(format!(
                "expected {} fields and {} couplings, got {} and {}",
                shape.num_fields(),
                shape.num_couplings(),
                h.len(),
                j.len()
            )));
        }
        Self::from_vec(shape, h.iter().chain(j).copied().collect())
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn fields(&self) -> &[f64] {
        &self.values[..self.shape.num_fields()]
    }

    pub fn couplings(&self) -> &[f64] {
        &self.values[self.shape.num_fields()..]
    }

    /// Coupling block for the pair `(i, j)`, `i < j`.
    pub fn coupling_block(&self, i: usize, j: usize) -> &[f64] {
        let off = self.shape.pair_offset(self.shape.pair_index(i, j));
        &self.values[off..off + self.shape.pair_block()]
    }

    pub fn coupling_block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let off = self.shape.pair_offset(self.shape.pair_index(i, j));
        let len = self.shape.pair_block();
        &mut self.values[off..off + len]
    }

    /// Ising parameters rewritten as an equivalent two-state Potts model.
    ///
    /// `h(a) = h * s(a)` and `J(a, b) = J * s(a) * s(b)` with `s(0) = -1`, `s(1) = +1`.
    pub fn to_potts(&self) -> Result<ModelParams> {
        if !self.shape.is_ising() {
            return Err(Error::Unsupported("only Ising parameters can be recoded".into()));
        }
        let d = self.shape.sites();
        let shape = ModelShape::potts(d, 2)?;
        let mut out = ModelParams::zeros(shape);
        for i in 0..d {
            for a in 0..2u8 {
                out.values[shape.field_offset(i, a as usize)] = self.values[i] * ModelShape::spin(a);
            }
        }
        for (p, _) in self.shape.pairs().enumerate() {
            let jv = self.values[self.shape.pair_offset(p)];
            let off = shape.pair_offset(p);
            for a in 0..2u8 {
                for b in 0..2u8 {
                    out.values[off + 2 * a as usize + b as usize] =
                        jv * ModelShape::spin(a) * ModelShape::spin(b);
                }
            }
        }
        Ok(out)
    }

    /// Frobenius norm of each coupling block (absolute value for Ising), in pair order.
    pub fn coupling_norms(&self) -> Vec<f64> {
        self.couplings()
            .chunks(self.shape.pair_block())
            .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Averages of the model features, in the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectations {
    shape: ModelShape,
    values: Vec<f64>,
}

impl FeatureExpectations {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    pub fn from_vec(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        shape.check_layout(values.len(), "feature vector")?;
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Adds `weight * f(x)` into `out` without validating `x`.
pub(crate) fn accumulate_statistics(shape: &ModelShape, x: &[u8], weight: f64, out: &mut [f64]) {
    let d = shape.sites();
    let nf = shape.num_fields();
    match shape.kind() {
        ModelKind::Ising => {
            for i in 0..d {
                let si = ModelShape::spin(x[i]);
                out[i] += weight * si;
                let ws = weight * si;
                let base = nf + i * d - i * (i + 1) / 2;
                for j in i + 1..d {
                    out[base + (j - i - 1)] += ws * ModelShape::spin(x[j]);
                }
            }
        }
        ModelKind::Potts => {
            let q = shape.states();
            let qq = q * q;
            for i in 0..d {
                out[i * q + x[i] as usize] += weight;
                let base = nf + (i * d - i * (i + 1) / 2) * qq;
                let row = x[i] as usize * q;
                for j in i + 1..d {
                    out[base + (j - i - 1) * qq + row + x[j] as usize] += weight;
                }
            }
        }
    }
}

/// Inner product of a parameter vector with the features of `x`, summed in layout order.
pub(crate) fn dot_statistics(shape: &ModelShape, theta: &[f64], x: &[u8]) -> f64 {
    let d = shape.sites();
    let nf = shape.num_fields();
    let mut total = 0.0;
    match shape.kind() {
        ModelKind::Ising => {
            for i in 0..d {
                total += theta[i] * ModelShape::spin(x[i]);
            }
            let mut k = nf;
            for i in 0..d {
                let si = ModelShape::spin(x[i]);
                for j in i + 1..d {
                    total += theta[k] * (si * ModelShape::spin(x[j]));
                    k += 1;
                }
            }
        }
        ModelKind::Potts => {
            let q = shape.states();
            let qq = q * q;
            for i in 0..d {
                total += theta[i * q + x[i] as usize];
            }
            let mut off = nf;
            for i in 0..d {
                let row = x[i] as usize * q;
                for j in i + 1..d {
                    total += theta[off + row + x[j] as usize];
                    off += qq;
                }
            }
        }
    }
    total
}

/// Energy `-(sum_i h_i(x_i) + sum_{i<j} J_ij(x_i, x_j))`.
pub fn energy(params: &ModelParams, x: &[u8]) -> Result<f64> {
    params.shape.check_configuration(x)?;
    Ok(-dot_statistics(&params.shape, &params.values, x))
}

/// Feature vector `f(x)`: spins and spin products for Ising, one-hot indicators for Potts.
pub fn sufficient_statistics(shape: &ModelShape, x: &[u8]) -> Result<FeatureExpectations> {
    shape.check_configuration(x)?;
    let mut out = FeatureExpectations::zeros(*shape);
    accumulate_statistics(shape, x, 1.0, &mut out.values);
    Ok(out)
}

/// Unnormalized log conditional `h_i(a) + sum_{j != i} J_ij(a, x_j)` for every state `a`.
pub(crate) fn conditional_logits(shape: &ModelShape, theta: &[f64], x: &[u8], i: usize, out: &mut [f64]) {
    let d = shape.sites();
    match shape.kind() {
        ModelKind::Ising => {
            let mut field = theta[i];
            for j in 0..d {
                if j == i {
                    continue;
                }
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                field += theta[shape.pair_offset(shape.pair_index(a, b))] * ModelShape::spin(x[j]);
            }
            out[0] = -field;
            out[1] = field;
        }
        ModelKind::Potts => {
            let q = shape.states();
            out[..q].copy_from_slice(&theta[i * q..(i + 1) * q]);
            for j in 0..d {
                if j == i {
                    continue;
                }
                let xj = x[j] as usize;
                if i < j {
                    let off = shape.pair_offset(shape.pair_index(i, j));
                    for (a, o) in out[..q].iter_mut().enumerate() {
                        *o += theta[off + a * q + xj];
                    }
                } else {
                    let off = shape.pair_offset(shape.pair_index(j, i)) + xj * q;
                    for (a, o) in out[..q].iter_mut().enumerate() {
                        *o += theta[off + a];
                    }
                }
            }
        }
    }
}

/// In-place softmax; returns the log normalizer.
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

/// `p(x_i = a | x_{-i})` for every state `a`.
pub fn conditional_distribution(params: &ModelParams, x: &[u8], i: usize) -> Result<Vec<f64>> {
    let shape = params.shape;
    shape.check_configuration(x)?;
    if i >= shape.sites() {
        return Err(Error::Shape(format!("site {i} out of range for {} sites", shape.sites())));
    }
    let mut out = vec![0.0; shape.states()];
    conditional_logits(&shape, &params.values, x, i, &mut out);
    softmax_in_place(&mut out);
    Ok(out)
}

/// Exact distribution of a small model.
#[derive(Clone, Debug)]
pub struct Enumeration {
    shape: ModelShape,
    pub log_z: f64,
    /// Probability of each configuration; see [`Enumeration::configuration`] for the ordering.
    pub probs: Vec<f64>,
}

impl Enumeration {
    /// Configuration at `index`, site 0 being the most significant base-`q` digit.
    pub fn configuration(&self, index: usize) -> Vec<u8> {
        index_to_configuration(&self.shape, index)
    }

    /// Index of a configuration in the probability table.
    pub fn index_of(&self, x: &[u8]) -> usize {
        x.iter().fold(0, |acc, &s| acc * self.shape.states() + s as usize)
    }

    /// Exact `E_p[f(x)]`.
    pub fn expectations(&self) -> FeatureExpectations {
        let mut out = FeatureExpectations::zeros(self.shape);
        let mut x = vec![0u8; self.shape.sites()];
        for &p in &self.probs {
            accumulate_statistics(&self.shape, &x, p, &mut out.values);
            increment_configuration(&mut x, self.shape.states());
        }
        out
    }

    /// Exact `Cov_p[f(x)]` as a dense row-major `k x k` matrix.
    pub fn feature_covariance(&self) -> Vec<f64> {
        let k = self.shape.num_params();
        let mean = self.expectations();
        let mut cov = vec![0.0; k * k];
        let mut x = vec![0u8; self.shape.sites()];
        let mut f = vec![0.0; k];
        for &p in &self.probs {
            f.iter_mut().for_each(|v| *v = 0.0);
            accumulate_statistics(&self.shape, &x, 1.0, &mut f);
            for a in 0..k {
                let da = f[a] - mean.values[a];
                if da == 0.0 {
                    continue;
                }
                for b in 0..k {
                    cov[a * k + b] += p * da * (f[b] - mean.values[b]);
                }
            }
            increment_configuration(&mut x, self.shape.states());
        }
        cov
    }
}

pub(crate) fn index_to_configuration(shape: &ModelShape, mut index: usize) -> Vec<u8> {
    let q = shape.states();
    let mut x = vec![0u8; shape.sites()];
    for s in x.iter_mut().rev() {
        *s = (index % q) as u8;
        index /= q;
    }
    x
}

fn increment_configuration(x: &mut [u8], q: usize) {
    for s in x.iter_mut().rev() {
        if (*s as usize) + 1 < q {
            *s += 1;
            return;
        }
        *s = 0;
    }
}

/// Exact `log Z` and probability table, refusing state spaces above [`DEFAULT_ENUMERATION_CAP`].
pub fn enumerate_distribution(params: &ModelParams) -> Result<Enumeration> {
    enumerate_distribution_with_cap(params, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_distribution_with_cap(params: &ModelParams, cap: u128) -> Result<Enumeration> {
    enumerate_slice(params.shape, &params.values, cap)
}

pub(crate) fn enumerate_slice(shape: ModelShape, theta: &[f64], cap: u128) -> Result<Enumeration> {
    let states = shape.num_configurations();
    if states > cap {
        return Err(Error::Capacity { states, cap });
    }
    let n = states as usize;
    let mut log_w = Vec::with_capacity(n);
    let mut x = vec![0u8; shape.sites()];
    for _ in 0..n {
        log_w.push(dot_statistics(&shape, theta, &x));
        increment_configuration(&mut x, shape.states());
    }
    let log_z = softmax_in_place(&mut log_w);
    Ok(Enumeration {
        shape,
        log_z,
        probs: log_w,
    })
}

/// Averaged log likelihood `<theta, E_D[f]> - log Z(theta)`.
pub fn log_likelihood_exact(params: &ModelParams, data_expectations: &FeatureExpectations) -> Result<f64> {
    check_same_shape(params.shape, data_expectations.shape)?;
    let e = enumerate_distribution(params)?;
    let dot: f64 = params
        .values
        .iter()
        .zip(&data_expectations.values)
        .map(|(a, b)| a * b)
        .sum();
    Ok(dot - e.log_z)
}

/// Averaged log-likelihood gradient `E_D[f] - E_p[f]` by enumeration.
pub fn log_likelihood_gradient_exact(
    params: &ModelParams,
    data_expectations: &FeatureExpectations,
) -> Result<FeatureExpectations> {
    check_same_shape(params.shape, data_expectations.shape)?;
    let model = enumerate_distribution(params)?.expectations();
    let values = data_expectations
        .values
        .iter()
        .zip(&model.values)
        .map(|(d, m)| d - m)
        .collect();
    Ok(FeatureExpectations {
        shape: params.shape,
        values,
    })
}

pub(crate) fn check_same_shape(a: ModelShape, b: ModelShape) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("layouts differ: {a:?} vs {b:?}")));
    }
    Ok(())
}
