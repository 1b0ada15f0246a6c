//! Synthetic Ising and Potts systems.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::contacts::ContactTruth;
use super::dataset::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::rng::{streams, substream};
use crate::sampler::{auto_thinning, gibbs_sample, swendsen_wang_sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    /// Periodic hypercubic lattice with `side^dims` spins, uniform coupling on neighbor pairs, no fields.
    LatticeFerromagnet {
        side: usize,
        #[serde(default = "default_dims")]
        dims: usize,
        #[serde(default = "default_coupling")]
        coupling: f64,
    },
    /// Erdos-Renyi graph with edge probability `degree / sites`, couplings `N(0, 1 / degree)`.
    DilutedSk { sites: usize, degree: f64 },
    /// Contacts of a random lattice polymer; group Student-t fields and Gaussian contact blocks.
    PottsProtein {
        sites: usize,
        states: usize,
        #[serde(default = "default_field_scale")]
        field_scale: f64,
        #[serde(default = "default_coupling_scale")]
        coupling_scale: f64,
        #[serde(default = "default_dof")]
        dof: f64,
    },
}

fn default_dims() -> usize {
    3
}
fn default_coupling() -> f64 {
    0.2
}
fn default_field_scale() -> f64 {
    1.0
}
fn default_coupling_scale() -> f64 {
    0.5
}
fn default_dof() -> f64 {
    3.0
}

impl SystemKind {
    pub fn lattice(side: usize, dims: usize, coupling: f64) -> Self {
        Self::LatticeFerromagnet { side, dims, coupling }
    }

    pub fn diluted_sk(sites: usize, degree: f64) -> Self {
        Self::DilutedSk { sites, degree }
    }

    pub fn potts_protein(sites: usize, states: usize) -> Self {
        Self::PottsProtein {
            sites,
            states,
            field_scale: default_field_scale(),
            coupling_scale: default_coupling_scale(),
            dof: default_dof(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSystemSpec {
    #[serde(flatten)]
    pub kind: SystemKind,
    pub seed: u64,
}

/// Generated parameters with the true interaction graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSystem {
    pub params: ModelParams,
    pub truth: ContactTruth,
}

/// Neighbor pairs `(i, j)`, `i < j`, of a periodic lattice, without duplicates.
pub fn lattice_edges(side: usize, dims: usize) -> Vec<(usize, usize)> {
    let n = side.pow(dims as u32);
    let mut edges = Vec::new();
    for site in 0..n {
        let mut stride = 1;
        for _ in 0..dims {
            let coord = (site / stride) % side;
            let next = site - coord * stride + ((coord + 1) % side) * stride;
            if next != site {
                edges.push((site.min(next), site.max(next)));
            }
            stride *= side;
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// A self-avoiding walk of `n` steps on the cubic lattice, restarting on dead ends.
fn self_avoiding_walk(n: usize, rng: &mut ChaCha8Rng) -> Vec<[i32; 3]> {
    const MOVES: [[i32; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    'restart: loop {
        let mut path = vec![[0i32; 3]];
        while path.len() < n {
            let last = *path.last().unwrap();
            let free: Vec<[i32; 3]> = MOVES
                .iter()
                .map(|m| [last[0] + m[0], last[1] + m[1], last[2] + m[2]])
                .filter(|p| !path.contains(p))
                .collect();
            if free.is_empty() {
                continue 'restart;
            }
            path.push(free[rng.random_range(0..free.len())]);
        }
        return path;
    }
}

/// Generates a system and its interaction graph.
pub fn generate_system_with_truth(spec: &SyntheticSystemSpec) -> Result<SyntheticSystem> {
    let mut rng = substream(spec.seed, streams::GENERATOR);
    match spec.kind {
        SystemKind::LatticeFerromagnet { side, dims, coupling } => {
            if side < 2 || dims == 0 {
                return Err(Error::Config(format!("lattice needs side >= 2 and dims >= 1, got {side}, {dims}")));
            }
            if !coupling.is_finite() {
                return Err(Error::Config("lattice coupling must be finite".into()));
            }
            let n = side.pow(dims as u32);
            let shape = ModelShape::ising(n)?;
            let edges = lattice_edges(side, dims);
            let mut j = vec![0.0; shape.num_pairs()];
            for &(a, b) in &edges {
                j[shape.pair_index(a, b)] = coupling;
            }
            Ok(SyntheticSystem {
                params: ModelParams::from_parts(shape, &vec![0.0; n], &j)?,
                truth: ContactTruth::from_adjacency(n, &edges)?,
            })
        }
        SystemKind::DilutedSk { sites, degree } => {
            check_positive("degree", degree)?;
            if sites < 2 || degree > sites as f64 {
                return Err(Error::Config(format!("need 2 <= sites and degree <= sites, got {sites}, {degree}")));
            }
            let shape = ModelShape::ising(sites)?;
            let p = degree / sites as f64;
            let normal = Normal::new(0.0, (1.0 / degree).sqrt()).expect("positive scale");
            let mut j = vec![0.0; shape.num_pairs()];
            let mut edges = Vec::new();
            for (k, (a, b)) in shape.pairs().enumerate() {
                if rng.random::<f64>() < p {
                    j[k] = normal.sample(&mut rng);
                    edges.push((a, b));
                }
            }
            Ok(SyntheticSystem {
                params: ModelParams::from_parts(shape, &vec![0.0; sites], &j)?,
                truth: ContactTruth::from_adjacency(sites, &edges)?,
            })
        }
        SystemKind::PottsProtein {
            sites,
            states,
            field_scale,
            coupling_scale,
            dof,
        } => {
            check_positive("field_scale", field_scale)?;
            check_positive("coupling_scale", coupling_scale)?;
            check_positive("dof", dof)?;
            let shape = ModelShape::potts(sites, states)?;
            let walk = self_avoiding_walk(sites, &mut rng);
            let mut distances = Vec::with_capacity(shape.num_pairs());
            for (a, b) in shape.pairs() {
                let d2: i32 = (0..3).map(|k| (walk[a][k] - walk[b][k]).pow(2)).sum();
                distances.push(f64::from(d2).sqrt());
            }
            // distances on the cubic lattice are square roots of integers; 1.5 keeps those up to sqrt(2)
            let truth = ContactTruth::from_distances(sites, distances, 1.5)?;

            let mut params = ModelParams::zeros(shape);
            // one Student-t scale per site vector: sigma^2 ~ InvGamma(dof/2, dof/2 * field_scale^2)
            let gamma = Gamma::new(dof / 2.0, 2.0 / (dof * field_scale * field_scale)).expect("positive");
            let q = shape.states();
            for i in 0..sites {
                let sigma = (1.0 / gamma.sample(&mut rng)).sqrt();
                for a in 0..q {
                    let z: f64 = rng.sample(StandardNormal);
                    params.as_mut_slice()[shape.field_offset(i, a)] = sigma * z;
                }
            }
            for (p, (a, b)) in shape.pairs().enumerate() {
                if truth.is_contact_pair(p) {
                    for v in params.coupling_block_mut(a, b) {
                        *v = coupling_scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            Ok(SyntheticSystem { params, truth })
        }
    }
}

/// Parameters of a synthetic system.
pub fn generate_system(spec: &SyntheticSystemSpec) -> Result<ModelParams> {
    Ok(generate_system_with_truth(spec)?.params)
}

/// How data is drawn from a generated system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub num_samples: usize,
    /// Updates between kept samples; `None` picks Swendsen-Wang thinning by autocorrelation.
    pub thinning: Option<usize>,
    /// Gibbs burn-in sweeps for Potts systems.
    pub burn_in: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(num_samples: usize, seed: u64) -> Self {
        Self { num_samples, thinning: None, burn_in: 1000, seed }
    }
}

/// Potts thinning when none is given, in sweeps.
pub const DEFAULT_POTTS_THINNING: usize = 1000;

/// Draws samples: Swendsen-Wang for Ising, a single Gibbs chain for Potts.
///
/// Returns the dataset and the thinning actually used.
pub fn sample_system(params: &ModelParams, plan: &SamplingPlan) -> Result<(WeightedDataset, usize)> {
    if plan.num_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let shape = params.shape();
    if shape.is_ising() {
        let thinning = match plan.thinning {
            Some(t) => t,
            None => auto_thinning(params, plan.seed, 2000)?,
        };
        let xs = swendsen_wang_sample(params, plan.num_samples, thinning, plan.seed)?;
        Ok((WeightedDataset::new(shape, &xs)?, thinning))
    } else {
        let thinning = plan.thinning.unwrap_or(DEFAULT_POTTS_THINNING);
        let xs = gibbs_sample(params, 1, plan.num_samples, plan.burn_in, thinning, plan.seed)?;
        Ok((WeightedDataset::new(shape, &xs)?, thinning))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_lattice() {
        let spec = SyntheticSystemSpec { kind: SystemKind::lattice(4, 3, 0.2), seed: 0 };
        let sys = generate_system_with_truth(&spec).unwrap();
        let shape = sys.params.shape();
        assert_eq!(shape.sites(), 64);
        let mut degree = vec![0; 64];
        for (p, (a, b)) in shape.pairs().enumerate() {
            let j = sys.params.couplings()[p];
            assert!(j == 0.0 || j == 0.2);
            if j != 0.0 {
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        assert!(degree.iter().all(|&d| d == 6));
        assert!(sys.params.fields().iter().all(|&h| h == 0.0));
        assert_eq!(sys.truth.num_contacts(), 192);
    }

    #[test]
    fn small_lattices_have_no_duplicate_edges() {
        assert_eq!(lattice_edges(2, 2), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(lattice_edges(3, 2).len(), 18);
    }

    #[test]
    fn sk_edge_count() {
        let mut counts = Vec::new();
        for seed in 0..20 {
            let spec = SyntheticSystemSpec { kind: SystemKind::diluted_sk(100, 2.0), seed };
            let p = generate_system(&spec).unwrap();
            counts.push(p.couplings().iter().filter(|&&j| j != 0.0).count() as f64);
        }
        // Binomial(4950, 0.02): mean 99, sd 9.85
        let sd = (4950.0f64 * 0.02 * 0.98).sqrt();
        for c in &counts {
            assert!((c - 99.0).abs() < 4.0 * sd, "{c}");
        }
        let mean = counts.iter().sum::<f64>() / 20.0;
        assert!((mean - 99.0).abs() < 3.0 * sd / 20f64.sqrt(), "{mean}");
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SyntheticSystemSpec { kind: SystemKind::potts_protein(16, 8), seed: 3 };
        let a = generate_system_with_truth(&spec).unwrap();
        assert_eq!(a, generate_system_with_truth(&spec).unwrap());
        let b = generate_system(&SyntheticSystemSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.params, b);
        // chain neighbors are always in contact
        for i in 0..15 {
            assert_eq!(a.truth.distance(i, i + 1), 1.0);
        }
        for (p, (i, j)) in a.params.shape().pairs().enumerate() {
            let zero = a.params.coupling_block(i, j).iter().all(|&v| v == 0.0);
            assert_eq!(zero, !a.truth.is_contact_pair(p));
        }
    }

    #[test]
    fn spec_json() {
        let spec: SyntheticSystemSpec = serde_json::from_str(r#"{"kind":"lattice_ferromagnet","side":3,"dims":2,"seed":9}"#).unwrap();
        assert_eq!(spec.kind, SystemKind::lattice(3, 2, 0.2));
        assert_eq!(spec.seed, 9);
    }
}
