//! Minimum probability flow for Ising models with single-spin-flip connectivity.

use super::penalized::{finish, fista, PointFit, RegularizerSpec, SolverOptions};
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{check_same_shape, ModelParams, ModelShape};
use crate::sampler::DenseModel;

/// Weighted average of `sum_i exp(-s_i f_i)` over the data, where `f_i` is the
/// local field, i.e. the flow to every single-flip neighbour. Returns the gradient too.
pub fn mpf_objective(params: &ModelParams, dataset: &WeightedDataset) -> Result<(f64, Vec<f64>)> {
    check_same_shape(params.shape(), dataset.shape())?;
    let mut g = vec![0.0; params.as_slice().len()];
    let v = mpf_eval(params.shape(), params.as_slice(), dataset, &mut g)?;
    Ok((v, g))
}

fn mpf_eval(shape: ModelShape, theta: &[f64], ds: &WeightedDataset, grad: &mut [f64]) -> Result<f64> {
    if !shape.is_ising() {
        return Err(Error::Unsupported("minimum probability flow is implemented for Ising models only".into()));
    }
    if ds.is_empty() || !(ds.weight_sum() > 0.0) {
        return Err(Error::Domain("flow objective of an empty dataset".into()));
    }
    let model = DenseModel::from_slice(shape, theta);
    let d = shape.sites();
    grad.fill(0.0);
    let mut value = 0.0;
    let mut e = vec![0.0; d];
    for (x, &w) in ds.samples().zip(ds.weights()) {
        for i in 0..d {
            e[i] = (-ModelShape::spin(x[i]) * model.ising_field(x, i)).exp();
            value += w * e[i];
            grad[i] -= w * ModelShape::spin(x[i]) * e[i];
        }
        for (p, (i, j)) in shape.pairs().enumerate() {
            let ss = ModelShape::spin(x[i]) * ModelShape::spin(x[j]);
            grad[shape.pair_offset(p)] -= w * ss * (e[i] + e[j]);
        }
    }
    let total = ds.weight_sum();
    grad.iter_mut().for_each(|g| *g /= total);
    Ok(value / total)
}

/// Minimizes `N_eff * K(theta) + penalty`.
pub fn fit_mpf(dataset: &WeightedDataset, reg: &RegularizerSpec, opts: &SolverOptions) -> Result<PointFit> {
    reg.validate()?;
    let shape = dataset.shape();
    if !shape.is_ising() {
        return Err(Error::Unsupported("minimum probability flow is implemented for Ising models only".into()));
    }
    let n = dataset.n_eff();
    let smooth = |theta: &[f64], grad: &mut [f64]| -> Result<f64> {
        let v = mpf_eval(shape, theta, dataset, grad)?;
        grad.iter_mut().for_each(|g| *g *= n);
        Ok(n * v + reg.smooth(shape, theta, grad))
    };
    let x0 = vec![0.0; shape.num_params()];
    finish(shape, fista(x0, smooth, |t| reg.nonsmooth(shape, t), |t, s| reg.prox(shape, t, s, None), opts)?, "flow")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::RegularizerKind;
    use crate::sampler::gibbs_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_flow_is_d() {
        let shape = ModelShape::ising(5).unwrap();
        let ds = WeightedDataset::new(shape, &[vec![0, 1, 0, 1, 1], vec![1; 5]]).unwrap();
        let (k, _) = mpf_objective(&ModelParams::zeros(shape), &ds).unwrap();
        assert_eq!(k, 5.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = ModelShape::ising(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta: Vec<f64> = (0..shape.num_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let p = ModelParams::from_vec(shape, theta).unwrap();
        let rows: Vec<Vec<u8>> = (0..12).map(|_| (0..5).map(|_| rng.random_range(0..2)).collect()).collect();
        let ds = WeightedDataset::new(shape, &rows).unwrap();
        let (_, g) = mpf_objective(&p, &ds).unwrap();
        for k in 0..g.len() {
            let h = 1e-5;
            let mut a = p.clone();
            a.as_mut_slice()[k] += h;
            let mut b = p.clone();
            b.as_mut_slice()[k] -= h;
            let fd = (mpf_objective(&a, &ds).unwrap().0 - mpf_objective(&b, &ds).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-2), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn rejects_potts() {
        let shape = ModelShape::potts(3, 3).unwrap();
        let ds = WeightedDataset::new(shape, &[vec![0, 1, 2]]).unwrap();
        assert!(matches!(
            fit_mpf(&ds, &RegularizerSpec::new(RegularizerKind::L1, 0.1), &SolverOptions::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn error_shrinks_with_sample_size() {
        let shape = ModelShape::ising(3).unwrap();
        let truth = ModelParams::from_vec(shape, vec![0.2, -0.3, 0.1, 0.4, -0.3, 0.25]).unwrap();
        let reg = RegularizerSpec { field_l2: 0.0, ..RegularizerSpec::new(RegularizerKind::L2, 0.0) };
        let err = |n: usize, seed: u64| {
            let rows = gibbs_sample(&truth, 20, n, 100, 3, seed).unwrap();
            let ds = WeightedDataset::new(shape, &rows).unwrap();
            let fit = fit_mpf(&ds, &reg, &SolverOptions::default()).unwrap();
            fit.params.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let small: f64 = (0..4).map(|s| err(1000, s)).sum::<f64>() / 4.0;
        let large: f64 = (0..4).map(|s| err(100_000, 10 + s)).sum::<f64>() / 4.0;
        assert!(large < 0.5 * small, "{small} -> {large}");
    }
}
