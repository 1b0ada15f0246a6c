//! Weighted categorical samples.

use crate::error::{Error, Result};
use crate::model::{accumulate_statistics, FeatureExpectations, ModelShape};

/// Samples of a model's configurations with per-sample weights and an effective sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    shape: ModelShape,
    /// Row-major, one row of `sites` states per sample.
    samples: Vec<u8>,
    weights: Vec<f64>,
    n_eff: f64,
}

impl WeightedDataset {
    /// Unit weights and `N_eff` equal to the sample count.
    pub fn new(shape: ModelShape, samples: &[Vec<u8>]) -> Result<Self> {
        let mut flat = Vec::with_capacity(samples.len() * shape.sites());
        for x in samples {
            shape.check_configuration(x)?;
            flat.extend_from_slice(x);
        }
        Self::from_flat(shape, flat, vec![1.0; samples.len()])
    }

    /// Rows from a flat buffer; `N_eff` is set to the weight total.
    pub fn from_flat(shape: ModelShape, samples: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        let d = shape.sites();
        if weights.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if samples.len() != weights.len() * d {
            return Err(Error::Shape(format!(
                "{} states do not form {} rows of {d} sites",
                samples.len(),
                weights.len()
            )));
        }
        if let Some(s) = samples.iter().find(|&&s| s as usize >= shape.states()) {
            return Err(Error::Domain(format!("state {s} outside 0..{}", shape.states())));
        }
        check_weights(&weights)?;
        let n_eff = weights.iter().sum();
        Ok(Self { shape, samples, weights, n_eff })
    }

    /// Replaces the weights; `N_eff` becomes their total.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), self.len())));
        }
        check_weights(&weights)?;
        self.n_eff = weights.iter().sum();
        self.weights = weights;
        Ok(self)
    }

    pub fn with_n_eff(mut self, n_eff: f64) -> Result<Self> {
        if !(n_eff.is_finite() && n_eff > 0.0) {
            return Err(Error::Domain(format!("effective sample size must be positive, got {n_eff}")));
        }
        self.n_eff = n_eff;
        Ok(self)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, n: usize) -> &[u8] {
        let d = self.shape.sites();
        &self.samples[n * d..(n + 1) * d]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[u8]> {
        self.samples.chunks_exact(self.shape.sites())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }

    /// Weighted mean of the sufficient statistics.
    pub fn expectations(&self) -> FeatureExpectations {
        let mut out = FeatureExpectations::zeros(self.shape);
        let total = self.weight_sum();
        for (x, &w) in self.samples().zip(&self.weights) {
            accumulate_statistics(&self.shape, x, w / total, out.as_mut_slice());
        }
        out
    }

    /// Rows at `indices`, with `N_eff` scaled by their share of the total weight.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len() * self.shape.sites());
        let mut weights = Vec::with_capacity(indices.len());
        for &n in indices {
            samples.extend_from_slice(self.sample(n));
            weights.push(self.weights[n]);
        }
        let share = weights.iter().sum::<f64>() / self.weight_sum();
        let n_eff = self.n_eff * share;
        let mut out = Self::from_flat(self.shape, samples, weights)?;
        out.n_eff = n_eff;
        Ok(out)
    }

    /// Every row repeated `k` times in place, weights and `N_eff` unchanged per row.
    pub fn duplicate(&self, k: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).flat_map(|n| std::iter::repeat_n(n, k)).collect();
        let mut out = self.subset(&idx)?;
        out.n_eff = self.n_eff * k as f64;
        Ok(out)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Domain(format!("weights must be finite and non-negative, got {w}")));
    }
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::Domain("weights sum to zero".into()));
    }
    Ok(())
}
