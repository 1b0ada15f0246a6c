//! Pseudolikelihood objective.

use rayon::prelude::*;

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{check_same_shape, softmax_in_place, ModelKind, ModelParams, ModelShape};
use crate::sampler::DenseModel;

/// Samples per rayon task; fixed so sums never depend on the thread count.
const CHUNK: usize = 128;

/// Weighted average of `sum_i log p(x_i | x_-i)` and its gradient.
pub fn pseudolikelihood(params: &ModelParams, dataset: &WeightedDataset) -> Result<(f64, Vec<f64>)> {
    check_same_shape(params.shape(), dataset.shape())?;
    let mut grad = vec![0.0; params.as_slice().len()];
    let v = pl_eval(params.shape(), params.as_slice(), dataset, Some(&mut grad))?;
    Ok((v, grad))
}

/// Value only.
pub fn pseudolikelihood_value(params: &ModelParams, dataset: &WeightedDataset) -> Result<f64> {
    check_same_shape(params.shape(), dataset.shape())?;
    pl_eval(params.shape(), params.as_slice(), dataset, None)
}

pub(crate) fn pl_eval(
    shape: ModelShape,
    theta: &[f64],
    ds: &WeightedDataset,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if ds.is_empty() || !(ds.weight_sum() > 0.0) {
        return Err(Error::Domain("pseudolikelihood of an empty dataset".into()));
    }
    let model = DenseModel::from_slice(shape, theta);
    let want = grad.is_some();
    let n = ds.len();
    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = if want { vec![0.0; theta.len()] } else { Vec::new() };
            let mut v = 0.0;
            let mut scratch = vec![0.0; shape.states()];
            for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let w = ds.weights()[k];
                if w == 0.0 {
                    continue;
                }
                v += w * sample_terms(&model, ds.sample(k), w, want.then_some(&mut g[..]), &mut scratch);
            }
            (v, g)
        })
        .collect();
    let total = ds.weight_sum();
    let mut value = 0.0;
    if let Some(out) = grad {
        out.fill(0.0);
        for (v, g) in &parts {
            value += v;
            for (o, x) in out.iter_mut().zip(g) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
    } else {
        value = parts.iter().map(|p| p.0).sum();
    }
    Ok(value / total)
}

/// Adds `w * d/dtheta` of one sample's log-pseudolikelihood to `grad`; returns the unweighted value.
fn sample_terms(model: &DenseModel, x: &[u8], w: f64, mut grad: Option<&mut [f64]>, scratch: &mut [f64]) -> f64 {
    let shape = model.shape();
    let d = shape.sites();
    let mut value = 0.0;
    match shape.kind() {
        ModelKind::Ising => {
            let mut r = vec![0.0; d];
            for i in 0..d {
                let s = ModelShape::spin(x[i]);
                let f = model.ising_field(x, i);
                // log sigmoid(2 s f)
                let z = 2.0 * s * f;
                value += -softplus(-z);
                r[i] = s - f.tanh();
            }
            if let Some(g) = grad.as_deref_mut() {
                for i in 0..d {
                    g[i] += w * r[i];
                }
                for (p, (i, j)) in shape.pairs().enumerate() {
                    let (si, sj) = (ModelShape::spin(x[i]), ModelShape::spin(x[j]));
                    g[shape.pair_offset(p)] += w * (r[i] * sj + r[j] * si);
                }
            }
        }
        ModelKind::Potts => {
            let q = shape.states();
            for i in 0..d {
                model.potts_logits(x, i, scratch);
                let xi = x[i] as usize;
                let own = scratch[xi];
                value += own - softmax_in_place(&mut scratch[..q]);
                let Some(g) = grad.as_deref_mut() else { continue };
                // residual delta(a, x_i) - p(a)
                scratch[..q].iter_mut().for_each(|p| *p = -*p);
                scratch[xi] += 1.0;
                for a in 0..q {
                    g[shape.field_offset(i, a)] += w * scratch[a];
                }
                for j in 0..d {
                    if j == i {
                        continue;
                    }
                    let xj = x[j] as usize;
                    if i < j {
                        let off = shape.pair_offset(shape.pair_index(i, j));
                        for a in 0..q {
                            g[off + a * q + xj] += w * scratch[a];
                        }
                    } else {
                        let off = shape.pair_offset(shape.pair_index(j, i));
                        for a in 0..q {
                            g[off + xj * q + a] += w * scratch[a];
                        }
                    }
                }
            }
        }
    }
    value
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::conditional_distribution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(shape: ModelShape, n: usize, seed: u64) -> (ModelParams, WeightedDataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..shape.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..shape.sites()).map(|_| rng.random_range(0..shape.states()) as u8).collect())
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let ds = WeightedDataset::new(shape, &rows).unwrap().with_weights(w).unwrap();
        (ModelParams::from_vec(shape, theta).unwrap(), ds)
    }

    #[test]
    fn zero_params_are_uniform() {
        let shape = ModelShape::potts(5, 3).unwrap();
        let (_, ds) = random_case(shape, 7, 0);
        let v = pseudolikelihood_value(&ModelParams::zeros(shape), &ds).unwrap();
        assert!((v + 5.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn value_matches_conditionals() {
        for shape in [ModelShape::ising(4).unwrap(), ModelShape::potts(4, 3).unwrap()] {
            let (p, ds) = random_case(shape, 5, 1);
            let mut expect = 0.0;
            for (x, w) in ds.samples().zip(ds.weights()) {
                for i in 0..4 {
                    expect += w * conditional_distribution(&p, x, i).unwrap()[x[i] as usize].ln();
                }
            }
            expect /= ds.weight_sum();
            assert!((pseudolikelihood_value(&p, &ds).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (k, shape) in [ModelShape::ising(4).unwrap(), ModelShape::potts(4, 3).unwrap()].into_iter().enumerate() {
            let (p, ds) = random_case(shape, 9, 2 + k as u64);
            let (_, g) = pseudolikelihood(&p, &ds).unwrap();
            for idx in 0..p.as_slice().len() {
                let h = 1e-5;
                let mut a = p.clone();
                a.as_mut_slice()[idx] += h;
                let mut b = p.clone();
                b.as_mut_slice()[idx] -= h;
                let fd = (pseudolikelihood_value(&a, &ds).unwrap() - pseudolikelihood_value(&b, &ds).unwrap()) / (2.0 * h);
                assert!((fd - g[idx]).abs() <= 1e-6 * fd.abs().max(1e-2), "{idx}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn duplication_invariant() {
        let (p, ds) = random_case(ModelShape::potts(3, 4).unwrap(), 6, 5);
        let (v1, g1) = pseudolikelihood(&p, &ds).unwrap();
        let (v2, g2) = pseudolikelihood(&p, &ds.duplicate(3).unwrap()).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
