//! K-fold selection of the penalty strength.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pseudolikelihood::pseudolikelihood_value;
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{streams, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(folds: usize, grid: Vec<f64>, seed: u64) -> Self {
        Self { folds, grid, seed }
    }

    /// Ten log-spaced values on `[0.01, 10]`.
    pub fn ising_grid() -> Vec<f64> {
        (0..10).map(|k| 10f64.powf(-2.0 + 3.0 * k as f64 / 9.0)).collect()
    }

    pub fn potts_grid() -> Vec<f64> {
        vec![0.3, 1.0, 3.0, 10.0, 30.0, 100.0]
    }

    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.folds < 2 || self.folds > samples {
            return Err(Error::Config(format!("{} folds requested for {samples} samples", self.folds)));
        }
        if self.grid.is_empty() || self.grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("penalty grid must be a nonempty list of non-negative values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// `(lambda, mean held-out pseudolikelihood)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Fold label of every sample; deterministic in the seed.
pub fn fold_assignment(samples: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut substream(seed, streams::CV_FOLDS));
    let mut label = vec![0; samples];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Scores every grid value by mean held-out pseudolikelihood. `fitter(train,
/// lambda, warm)` fits one model; within a fold the grid runs from the
/// strongest penalty down, each fit warm-started from the previous one.
pub fn cross_validate<F>(fitter: F, dataset: &WeightedDataset, plan: &CvPlan) -> Result<CvResult>
where
    F: Fn(&WeightedDataset, f64, Option<&ModelParams>) -> Result<ModelParams> + Sync,
{
    plan.validate(dataset.len())?;
    let label = fold_assignment(dataset.len(), plan.folds, plan.seed);
    let mut order: Vec<usize> = (0..plan.grid.len()).collect();
    order.sort_by(|&a, &b| plan.grid[b].total_cmp(&plan.grid[a]));
    let per_fold: Vec<Vec<f64>> = (0..plan.folds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..dataset.len()).filter(|&i| label[i] != k).collect();
            let test: Vec<usize> = (0..dataset.len()).filter(|&i| label[i] == k).collect();
            let (train, test) = (dataset.subset(&train)?, dataset.subset(&test)?);
            let mut scores = vec![0.0; plan.grid.len()];
            let mut warm: Option<ModelParams> = None;
            for &g in &order {
                let fit = fitter(&train, plan.grid[g], warm.as_ref())?;
                scores[g] = pseudolikelihood_value(&fit, &test)?;
                warm = Some(fit);
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<(f64, f64)> = plan
        .grid
        .iter()
        .enumerate()
        .map(|(g, &l)| (l, per_fold.iter().map(|s| s[g]).sum::<f64>() / plan.folds as f64))
        .collect();
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 || (s.1 == best.1 && s.0 > best.0) {
            best = s;
        }
    }
    Ok(CvResult { best_lambda: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_pl_from, RegularizerKind, RegularizerSpec, SolverOptions};
    use crate::model::ModelShape;
    use crate::sampler::gibbs_sample;

    fn pl_fitter(kind: RegularizerKind) -> impl Fn(&WeightedDataset, f64, Option<&ModelParams>) -> Result<ModelParams> + Sync {
        move |ds, l, warm| Ok(fit_pl_from(ds, &RegularizerSpec::new(kind, l), &SolverOptions::default(), warm)?.params)
    }

    #[test]
    fn grids() {
        let g = CvPlan::ising_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[9] - 10.0).abs() < 1e-12);
        assert!((g[1] / g[0] - g[9] / g[8]).abs() < 1e-9);
        assert_eq!(CvPlan::potts_grid(), vec![0.3, 1.0, 3.0, 10.0, 30.0, 100.0]);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 1);
        assert_eq!(a, fold_assignment(23, 5, 1));
        assert_ne!(a, fold_assignment(23, 5, 2));
        for k in 0..5 {
            let c = a.iter().filter(|&&f| f == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn single_value_and_validation() {
        let shape = ModelShape::ising(3).unwrap();
        let rows: Vec<Vec<u8>> = (0..20).map(|i| vec![(i % 2) as u8, (i % 3 == 0) as u8, 1]).collect();
        let ds = WeightedDataset::new(shape, &rows).unwrap();
        let r = cross_validate(pl_fitter(RegularizerKind::L1), &ds, &CvPlan::new(4, vec![0.5], 0)).unwrap();
        assert_eq!(r.best_lambda, 0.5);
        assert!(cross_validate(pl_fitter(RegularizerKind::L1), &ds, &CvPlan::new(1, vec![0.5], 0)).is_err());
        assert!(cross_validate(pl_fitter(RegularizerKind::L1), &ds, &CvPlan::new(4, vec![], 0)).is_err());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        // every grid value zeroes all couplings, so scores tie
        let shape = ModelShape::ising(3).unwrap();
        let rows: Vec<Vec<u8>> = (0..20).map(|i| vec![(i % 2) as u8, (i / 2 % 2) as u8, (i % 5 == 0) as u8]).collect();
        let ds = WeightedDataset::new(shape, &rows).unwrap();
        let r = cross_validate(pl_fitter(RegularizerKind::L1), &ds, &CvPlan::new(4, vec![1e4, 1e5, 1e6], 0)).unwrap();
        assert_eq!(r.best_lambda, 1e6);
    }

    #[test]
    fn separable_site_blocks_are_zeroed() {
        // sites 0-1-2 form a chain; the rest are independent of everything
        let (d, q) = (8, 8);
        let shape = ModelShape::potts(d, q).unwrap();
        let mut p = crate::model::ModelParams::zeros(shape);
        for (i, j) in [(0, 1), (1, 2)] {
            let b = p.coupling_block_mut(i, j);
            for a in 0..q {
                b[a * q + a] = 1.0;
            }
        }
        p.as_mut_slice()[shape.field_offset(d - 1, 0)] = 0.5;
        let rows = gibbs_sample(&p, 20, 10_000, 100, 3, 5).unwrap();
        let ds = WeightedDataset::new(shape, &rows).unwrap();
        let grid = vec![30.0, 60.0, 100.0, 150.0, 200.0, 300.0, 500.0];
        let r = cross_validate(pl_fitter(RegularizerKind::GroupL1), &ds, &CvPlan::new(5, grid, 0)).unwrap();
        let null_zeroed = |lambda: f64| {
            let f = fit_pl_from(&ds, &RegularizerSpec::new(RegularizerKind::GroupL1, lambda), &SolverOptions::default(), None).unwrap();
            let z = shape.pairs().filter(|&(i, j)| j >= 3 && f.params.coupling_block(i, j).iter().all(|v| *v == 0.0)).count();
            let kept = [(0, 1), (1, 2)].iter().all(|&(i, j)| f.params.coupling_block(i, j).iter().any(|v| *v != 0.0));
            (z, kept)
        };
        assert!(null_zeroed(r.best_lambda).1, "signal lost at {}", r.best_lambda);
        // somewhere on the grid every separable block is zero while the chain survives
        assert!(r.scores.iter().any(|&(l, _)| null_zeroed(l) == (25, true)));
    }
}
