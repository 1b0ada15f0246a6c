use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{accumulate_statistics, check_same_shape, FeatureExpectations, ModelKind, ModelParams, ModelShape};
use crate::rng::{indexed_stream, streams};

/// Chains advanced together by one rayon task; fixed so results never depend on the thread count.
const CHAINS_PER_TASK: usize = 8;

/// Parameters unpacked into dense per-site tables for fast conditionals.
#[derive(Clone, Debug)]
pub struct DenseModel {
    shape: ModelShape,
    fields: Vec<f64>,
    /// Ising: `D x D` symmetric matrix with zero diagonal.
    /// Potts: `[i][j][x_j][a]`, the contribution of neighbour `j` in state `x_j`
    /// to the logit of state `a` at site `i`.
    couplings: Vec<f64>,
}

impl DenseModel {
    pub fn new(params: &ModelParams) -> Self {
        Self::from_slice(params.shape(), params.as_slice())
    }

    pub(crate) fn from_slice(shape: ModelShape, theta: &[f64]) -> Self {
        let d = shape.sites();
        let q = shape.states();
        let fields = theta[..shape.num_fields()].to_vec();
        let couplings = match shape.kind() {
            ModelKind::Ising => {
                let mut m = vec![0.0; d * d];
                for (p, (i, j)) in shape.pairs().enumerate() {
                    let v = theta[shape.pair_offset(p)];
                    m[i * d + j] = v;
                    m[j * d + i] = v;
                }
                m
            }
            ModelKind::Potts => {
                let qq = q * q;
                let mut m = vec![0.0; d * d * qq];
                for (p, (i, j)) in shape.pairs().enumerate() {
                    let block = &theta[shape.pair_offset(p)..shape.pair_offset(p) + qq];
                    for a in 0..q {
                        for b in 0..q {
                            let v = block[a * q + b];
                            // site i, neighbour j in state b, logit a
                            m[(i * d + j) * qq + b * q + a] = v;
                            // site j, neighbour i in state a, logit b
                            m[(j * d + i) * qq + a * q + b] = v;
                        }
                    }
                }
                m
            }
        };
        Self {
            shape,
            fields,
            couplings,
        }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    /// Ising local field `h_i + sum_j J_ij s_j`.
    pub(crate) fn ising_field(&self, x: &[u8], i: usize) -> f64 {
        let d = self.shape.sites();
        let row = &self.couplings[i * d..(i + 1) * d];
        let mut f = self.fields[i];
        for (j, &s) in x.iter().enumerate() {
            f += row[j] * (2.0 * s as f64 - 1.0);
        }
        f
    }

    /// Potts logits at site `i` written into `out[..q]`.
    pub(crate) fn potts_logits(&self, x: &[u8], i: usize, out: &mut [f64]) {
        let d = self.shape.sites();
        let q = self.shape.states();
        let qq = q * q;
        out[..q].copy_from_slice(&self.fields[i * q..(i + 1) * q]);
        for (j, &s) in x.iter().enumerate() {
            if j == i {
                continue;
            }
            let off = (i * d + j) * qq + s as usize * q;
            for (o, c) in out[..q].iter_mut().zip(&self.couplings[off..off + q]) {
                *o += c;
            }
        }
    }

    /// One ascending-order Gibbs sweep over `x`.
    pub(crate) fn sweep<R: Rng>(&self, x: &mut [u8], rng: &mut R, scratch: &mut [f64]) {
        match self.shape.kind() {
            ModelKind::Ising => {
                for i in 0..x.len() {
                    let f = self.ising_field(x, i);
                    let p_up = 1.0 / (1.0 + (-2.0 * f).exp());
                    x[i] = u8::from(rng.random::<f64>() < p_up);
                }
            }
            ModelKind::Potts => {
                let q = self.shape.states();
                for i in 0..x.len() {
                    self.potts_logits(x, i, scratch);
                    x[i] = sample_logits(&mut scratch[..q], rng) as u8;
                }
            }
        }
    }
}

/// Draws an index with probability proportional to `exp(logits)`; overwrites `logits`.
pub(crate) fn sample_logits<R: Rng>(logits: &mut [f64], rng: &mut R) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    let mut u = rng.random::<f64>() * total;
    for (a, w) in logits.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return a;
        }
    }
    logits.len() - 1
}

/// Persistent Gibbs chains.
///
/// Each chain owns a ChaCha stream derived from `(seed, chain index)`, so the
/// pool evolves identically however the chains are scheduled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPool {
    shape: ModelShape,
    states: Vec<u8>,
    rngs: Vec<ChaCha8Rng>,
    sweep_count: u64,
}

impl ChainPool {
    /// `chains` chains with uniformly random initial states.
    pub fn new(shape: ModelShape, chains: usize, seed: u64) -> Result<Self> {
        if chains == 0 {
            return Err(Error::Config("a chain pool needs at least one chain".into()));
        }
        let d = shape.sites();
        let q = shape.states() as u8;
        let mut rngs: Vec<ChaCha8Rng> = (0..chains as u64)
            .map(|m| indexed_stream(seed, streams::CHAINS, m))
            .collect();
        let mut states = vec![0u8; chains * d];
        for (x, rng) in states.chunks_mut(d).zip(rngs.iter_mut()) {
            for s in x.iter_mut() {
                *s = rng.random_range(0..q);
            }
        }
        Ok(Self {
            shape,
            states,
            rngs,
            sweep_count: 0,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn num_chains(&self) -> usize {
        self.rngs.len()
    }

    /// Total sweeps performed, summed over chains.
    pub fn sweep_count(&self) -> u64 {
        self.sweep_count
    }

    /// Current state of chain `m`.
    pub fn chain(&self, m: usize) -> &[u8] {
        let d = self.shape.sites();
        &self.states[m * d..(m + 1) * d]
    }

    pub fn chains(&self) -> impl Iterator<Item = &[u8]> {
        self.states.chunks(self.shape.sites())
    }

    /// Advances every chain by `n` sweeps.
    pub fn gibbs_sweep(&mut self, params: &ModelParams, n: usize) -> Result<()> {
        check_same_shape(self.shape, params.shape())?;
        if n == 0 {
            return Err(Error::Config("sweep count must be at least 1".into()));
        }
        self.run(&DenseModel::new(params), n, None);
        Ok(())
    }

    /// Advances every chain by `n` sweeps and averages `f(x)` over all visited states.
    pub fn estimate_model_expectations(&mut self, params: &ModelParams, n: usize) -> Result<FeatureExpectations> {
        check_same_shape(self.shape, params.shape())?;
        let mut out = FeatureExpectations::zeros(self.shape);
        self.estimate_into(&DenseModel::new(params), n, out.as_mut_slice())?;
        Ok(out)
    }

    /// As [`estimate_model_expectations`](Self::estimate_model_expectations), writing into `out`.
    pub fn estimate_into(&mut self, model: &DenseModel, n: usize, out: &mut [f64]) -> Result<()> {
        check_same_shape(self.shape, model.shape())?;
        if n == 0 {
            return Err(Error::Config("sweep count must be at least 1".into()));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        self.run(model, n, Some(out));
        let scale = 1.0 / (self.num_chains() * n) as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    fn run(&mut self, model: &DenseModel, n: usize, out: Option<&mut [f64]>) {
        let shape = self.shape;
        let d = shape.sites();
        let k = shape.num_params();
        let q = shape.states();
        let accumulate = out.is_some();
        let work = |(xs, rngs): (&mut [u8], &mut [ChaCha8Rng])| {
            let mut acc = if accumulate { vec![0.0; k] } else { Vec::new() };
            let mut scratch = vec![0.0; q];
            for (x, rng) in xs.chunks_mut(d).zip(rngs.iter_mut()) {
                for _ in 0..n {
                    model.sweep(x, rng, &mut scratch);
                    if accumulate {
                        accumulate_statistics(&shape, x, 1.0, &mut acc);
                    }
                }
            }
            acc
        };
        let m = self.rngs.len();
        let tasks = self
            .states
            .chunks_mut(CHAINS_PER_TASK * d)
            .zip(self.rngs.chunks_mut(CHAINS_PER_TASK));
        let partials: Vec<Vec<f64>> = if m * n * d * d >= 1 << 16 {
            tasks.collect::<Vec<_>>().into_par_iter().map(work).collect()
        } else {
            tasks.map(work).collect()
        };
        if let Some(out) = out {
            for acc in partials {
                for (o, a) in out.iter_mut().zip(acc) {
                    *o += a;
                }
            }
        }
        self.sweep_count += (self.rngs.len() * n) as u64;
    }
}

/// Draws `num_samples` configurations from `num_chains` independent Gibbs chains,
/// discarding `burn_in` sweeps and keeping every `thinning`-th sweep after that.
///
/// Samples are returned chain-major.
pub fn gibbs_sample(
    params: &ModelParams,
    num_chains: usize,
    num_samples: usize,
    burn_in: usize,
    thinning: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>> {
    if thinning == 0 {
        return Err(Error::Config("thinning must be at least 1".into()));
    }
    let mut pool = ChainPool::new(params.shape(), num_chains, seed)?;
    let model = DenseModel::new(params);
    if burn_in > 0 {
        pool.run(&model, burn_in, None);
    }
    let per_chain = num_samples.div_ceil(num_chains);
    let d = params.shape().sites();
    let mut out = Vec::with_capacity(num_samples);
    let q = params.shape().states();
    for m in 0..num_chains {
        let mut scratch = vec![0.0; q];
        let (x, rng) = (&mut pool.states[m * d..(m + 1) * d], &mut pool.rngs[m]);
        for _ in 0..per_chain {
            if out.len() == num_samples {
                break;
            }
            for _ in 0..thinning {
                model.sweep(x, rng, &mut scratch);
            }
            out.push(x.to_vec());
        }
    }
    Ok(out)
}
