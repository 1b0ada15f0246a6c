//! Pairwise contact truth and precision of coupling-norm rankings.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Distance per site pair `i < j` in layout order; a pair is a contact when
/// its distance is below `threshold`. Pure adjacency uses distance 0 for
/// contacts and infinity otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactTruth {
    sites: usize,
    distances: Vec<f64>,
    pub threshold: f64,
}

/// Default contact threshold for distances in angstroms.
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 8.0;

fn pair_index(d: usize, i: usize, j: usize) -> usize {
    i * d - i * (i + 1) / 2 + (j - i - 1)
}

impl ContactTruth {
    pub fn from_distances(sites: usize, distances: Vec<f64>, threshold: f64) -> Result<Self> {
        if distances.len() != sites * sites.saturating_sub(1) / 2 {
            return Err(Error::Shape(format!("{} distances for {sites} sites", distances.len())));
        }
        if distances.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::Domain("distances must be non-negative".into()));
        }
        Ok(Self { sites, distances, threshold })
    }

    /// Contacts at the listed pairs, in any order.
    pub fn from_adjacency(sites: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut distances = vec![f64::INFINITY; sites * sites.saturating_sub(1) / 2];
        for &(a, b) in pairs {
            let (i, j) = (a.min(b), a.max(b));
            if i == j || j >= sites {
                return Err(Error::Domain(format!("invalid contact pair ({a}, {b})")));
            }
            distances[pair_index(sites, i, j)] = 0.0;
        }
        Ok(Self { sites, distances, threshold: 1.0 })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (i, j) = (i.min(j), i.max(j));
        self.distances[pair_index(self.sites, i, j)]
    }

    pub fn is_contact_pair(&self, p: usize) -> bool {
        self.distances[p] < self.threshold
    }

    pub fn num_contacts(&self) -> usize {
        (0..self.distances.len()).filter(|&p| self.is_contact_pair(p)).count()
    }

    /// Pairs `(i, j)` in contact, in layout order.
    pub fn contacts(&self) -> Vec<(usize, usize)> {
        let d = self.sites;
        (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .enumerate()
            .filter(|(p, _)| self.is_contact_pair(*p))
            .map(|(_, ij)| ij)
            .collect()
    }

    /// Reads `i<TAB>j<TAB>distance` rows after a header; unlisted pairs are far apart.
    pub fn read_tsv(path: &Path, sites: usize, threshold: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut distances = vec![f64::INFINITY; sites * sites.saturating_sub(1) / 2];
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse { path: path.to_owned(), line: ln + 1, message: m };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 columns, found {}", f.len())));
            }
            let i: usize = f[0].trim().parse().map_err(|e| err(format!("bad site: {e}")))?;
            let j: usize = f[1].trim().parse().map_err(|e| err(format!("bad site: {e}")))?;
            let dist: f64 = f[2].trim().parse().map_err(|e| err(format!("bad distance: {e}")))?;
            if i == j || i.max(j) >= sites || !(dist >= 0.0) {
                return Err(err(format!("invalid row ({i}, {j}, {dist})")));
            }
            distances[pair_index(sites, i.min(j), i.max(j))] = dist;
        }
        Self::from_distances(sites, distances, threshold)
    }

    /// Writes the finite distances as `i, j, distance` rows.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("i\tj\tdistance\n");
        let d = self.sites;
        for i in 0..d {
            for j in i + 1..d {
                let dist = self.distances[pair_index(d, i, j)];
                if dist.is_finite() {
                    out.push_str(&format!("{i}\t{j}\t{dist:?}\n"));
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Pairs ranked by coupling-block norm, highest first, ties in layout order.
pub fn rank_pairs(params: &ModelParams) -> Vec<usize> {
    let scores = params.coupling_norms();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Precision at every cutoff `1..=top_k` of the coupling-norm ranking.
pub fn evaluate_contacts(params: &ModelParams, truth: &ContactTruth, top_k: usize) -> Result<Vec<f64>> {
    if params.shape().sites() != truth.sites() {
        return Err(Error::Shape(format!(
            "model has {} sites, contact truth has {}",
            params.shape().sites(),
            truth.sites()
        )));
    }
    let order = rank_pairs(params);
    let mut hits = 0usize;
    Ok(order
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(k, &p)| {
            hits += usize::from(truth.is_contact_pair(p));
            hits as f64 / (k + 1) as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    #[test]
    fn perfect_and_tied_rankings() {
        let shape = ModelShape::ising(4).unwrap();
        let truth = ContactTruth::from_adjacency(4, &[(0, 1), (2, 3)]).unwrap();
        let mut j = vec![0.0; 6];
        j[shape.pair_index(0, 1)] = 0.5;
        j[shape.pair_index(2, 3)] = -0.7;
        let p = ModelParams::from_parts(shape, &[0.0; 4], &j).unwrap();
        assert_eq!(evaluate_contacts(&p, &truth, 2).unwrap(), vec![1.0, 1.0]);
        // all-zero couplings rank pairs in layout order: (0,1) first
        let z = ModelParams::zeros(shape);
        assert_eq!(rank_pairs(&z), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(evaluate_contacts(&z, &truth, 3).unwrap(), vec![1.0, 0.5, 1.0 / 3.0]);
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let t = ContactTruth::from_distances(3, vec![4.0, 9.5, f64::INFINITY], 8.0).unwrap();
        t.write_tsv(&path).unwrap();
        let back = ContactTruth::read_tsv(&path, 3, 8.0).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.contacts(), vec![(0, 1)]);
    }
}
