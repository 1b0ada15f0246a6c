//! Swendsen-Wang cluster updates for Ising models.
//!
//! A bond `(i, j)` is satisfied when `J_ij s_i s_j > 0`; satisfied bonds are
//! activated with probability `1 - exp(-2 |J_ij|)`, which covers ferromagnetic
//! (parallel) and antiferromagnetic (antiparallel) bonds alike. Every cluster is
//! then set to one of its two orientations with heat-bath probabilities from
//! the cluster's total field `sum_{i in C} h_i s_i`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::autocorr::integrated_autocorrelation_time;
use crate::error::{Error, Result};
use crate::model::{dot_statistics, ModelParams, ModelShape};
use crate::rng::{substream, streams};

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i;
        }
        self.size.iter_mut().for_each(|s| *s = 1);
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// A Swendsen-Wang Markov chain over one Ising configuration.
pub struct SwendsenWang {
    params: ModelParams,
    /// Nonzero couplings with their activation probabilities.
    bonds: Vec<(usize, usize, f64, f64)>,
    state: Vec<u8>,
    sets: DisjointSets,
    cluster_field: Vec<f64>,
    flip: Vec<bool>,
    rng: ChaCha8Rng,
}

impl SwendsenWang {
    pub fn new(params: &ModelParams, seed: u64) -> Result<Self> {
        let shape = params.shape();
        if !shape.is_ising() {
            return Err(Error::Unsupported("Swendsen-Wang sampling needs an Ising model".into()));
        }
        let bonds = shape
            .pairs()
            .enumerate()
            .filter_map(|(p, (i, j))| {
                let jv = params.as_slice()[shape.pair_offset(p)];
                (jv != 0.0).then(|| (i, j, jv, -(-2.0 * jv.abs()).exp_m1()))
            })
            .collect();
        let mut rng = substream(seed, streams::SAMPLER);
        let d = shape.sites();
        let state = (0..d).map(|_| rng.random_range(0..2u8)).collect();
        Ok(Self {
            params: params.clone(),
            bonds,
            state,
            sets: DisjointSets::new(d),
            cluster_field: vec![0.0; d],
            flip: vec![false; d],
            rng,
        })
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    /// One cluster update.
    pub fn update(&mut self) {
        let d = self.state.len();
        let h = self.params.fields();
        self.sets.reset();
        for &(i, j, jv, p_active) in &self.bonds {
            let aligned = self.state[i] == self.state[j];
            let satisfied = if jv > 0.0 { aligned } else { !aligned };
            if satisfied && self.rng.random::<f64>() < p_active {
                self.sets.union(i, j);
            }
        }
        self.cluster_field.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..d {
            let r = self.sets.find(i);
            self.cluster_field[r] += h[i] * ModelShape::spin(self.state[i]);
        }
        for r in 0..d {
            if self.sets.parent[r] == r {
                // keep the current orientation with probability e^H / (e^H + e^-H)
                let keep = 1.0 / (1.0 + (-2.0 * self.cluster_field[r]).exp());
                self.flip[r] = self.rng.random::<f64>() >= keep;
            }
        }
        for i in 0..d {
            let r = self.sets.find(i);
            if self.flip[r] {
                self.state[i] ^= 1;
            }
        }
    }

    /// Energy of the current state.
    pub fn energy(&self) -> f64 {
        -dot_statistics(&self.params.shape(), self.params.as_slice(), &self.state)
    }

    /// Mean spin of the current state.
    pub fn magnetization(&self) -> f64 {
        self.state.iter().map(|&s| ModelShape::spin(s)).sum::<f64>() / self.state.len() as f64
    }
}

/// Burn-in used by [`swendsen_wang_sample`], in cluster updates.
pub fn default_burn_in(thinning: usize) -> usize {
    (10 * thinning).max(200)
}

/// Draws `num_samples` configurations separated by `thinning` cluster updates.
pub fn swendsen_wang_sample(
    params: &ModelParams,
    num_samples: usize,
    thinning: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>> {
    if thinning == 0 {
        return Err(Error::Config("thinning must be at least 1".into()));
    }
    let mut chain = SwendsenWang::new(params, seed)?;
    for _ in 0..default_burn_in(thinning) {
        chain.update();
    }
    let mut out = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        for _ in 0..thinning {
            chain.update();
        }
        out.push(chain.state.clone());
    }
    Ok(out)
}

/// Picks a thinning interval from a pilot run: four integrated autocorrelation
/// times of the slower of magnetization and energy, rounded up.
pub fn auto_thinning(params: &ModelParams, seed: u64, pilot_updates: usize) -> Result<usize> {
    let mut chain = SwendsenWang::new(params, seed ^ 0x5eed)?;
    for _ in 0..200 {
        chain.update();
    }
    let mut mags = Vec::with_capacity(pilot_updates);
    let mut energies = Vec::with_capacity(pilot_updates);
    for _ in 0..pilot_updates {
        chain.update();
        mags.push(chain.magnetization());
        energies.push(chain.energy());
    }
    let tau = integrated_autocorrelation_time(&mags).max(integrated_autocorrelation_time(&energies));
    Ok((4.0 * tau).ceil().max(1.0) as usize)
}
