//! Sample matrices as TSV with a JSON sidecar.
//!
//! The TSV has a header `x0 .. x{D-1}` and an optional trailing `weight`
//! column. Ising rows hold spins `-1`/`+1`, Potts rows hold states `0..q-1`.
//! The sidecar sits at `<path>.json` and records the model shape.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};

/// Provenance stored next to a sample TSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub shape: ModelShape,
    pub num_samples: usize,
    pub seed: u64,
    pub sampler: String,
    pub thinning: usize,
    pub model_hash: String,
}

/// SHA-256 of the canonical JSON of `params`.
pub fn model_hash(params: &ModelParams) -> String {
    let json = serde_json::to_vec(params).expect("parameters serialize");
    hex::encode(Sha256::digest(&json))
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// TSV text of a dataset; the weight column is written only when weights are not all 1.
pub fn samples_to_tsv(ds: &WeightedDataset) -> String {
    let shape = ds.shape();
    let weighted = ds.weights().iter().any(|&w| w != 1.0);
    let mut out = String::new();
    let header: Vec<String> = (0..shape.sites()).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join("\t"));
    if weighted {
        out.push_str("\tweight");
    }
    out.push('\n');
    for (x, w) in ds.samples().zip(ds.weights()) {
        for (i, &s) in x.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            if shape.is_ising() {
                out.push_str(if s == 0 { "-1" } else { "1" });
            } else {
                write!(out, "{s}").unwrap();
            }
        }
        if weighted {
            write!(out, "\t{w:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_samples(path: &Path, ds: &WeightedDataset, sidecar: &SampleSidecar) -> Result<()> {
    std::fs::write(path, samples_to_tsv(ds))?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Option<SampleSidecar>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&std::fs::read(side)?)?))
}

/// Reads a sample TSV. The shape comes from `shape`, else the sidecar, else
/// the values: all `-1`/`+1` means Ising, otherwise Potts with `q = max + 1`.
pub fn read_samples(path: &Path, shape: Option<ModelShape>) -> Result<WeightedDataset> {
    let text = std::fs::read_to_string(path)?;
    let shape = match shape {
        Some(s) => Some(s),
        None => read_sidecar(path)?.map(|s| s.shape),
    };
    parse_samples(path, &text, shape)
}

fn parse_samples(path: &Path, text: &str, shape: Option<ModelShape>) -> Result<WeightedDataset> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::EmptyDataset);
    };
    let cols: Vec<&str> = header.split('\t').collect();
    let weighted = cols.last() == Some(&"weight");
    let d = cols.len() - usize::from(weighted);
    if d == 0 {
        return Err(err(1, "no site columns".into()));
    }
    let mut raw = Vec::new();
    let mut weights = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(err(ln + 1, format!("expected {} columns, found {}", cols.len(), fields.len())));
        }
        for f in &fields[..d] {
            raw.push(f.trim().parse::<i64>().map_err(|e| err(ln + 1, format!("bad state {f:?}: {e}")))?);
        }
        weights.push(if weighted {
            fields[d].trim().parse::<f64>().map_err(|e| err(ln + 1, format!("bad weight: {e}")))?
        } else {
            1.0
        });
    }
    if weights.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shape = match shape {
        Some(s) => s,
        None if raw.iter().all(|&v| v == -1 || v == 1) => ModelShape::ising(d)?,
        None => {
            let max = raw.iter().copied().max().unwrap_or(0);
            ModelShape::potts(d, (max + 1).max(2) as usize)?
        }
    };
    if shape.sites() != d {
        return Err(Error::Shape(format!("file has {d} sites, model has {}", shape.sites())));
    }
    let states = raw
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let line = || err(k / d + 2, format!("state {v} invalid for {shape:?}"));
            if shape.is_ising() {
                match v {
                    -1 => Ok(0),
                    1 => Ok(1),
                    _ => Err(line()),
                }
            } else if (0..shape.states() as i64).contains(&v) {
                Ok(v as u8)
            } else {
                Err(line())
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    WeightedDataset::from_flat(shape, states, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tsv");
        let shape = ModelShape::ising(3).unwrap();
        let ds = WeightedDataset::new(shape, &[vec![0, 1, 1], vec![1, 1, 0]]).unwrap();
        let side = SampleSidecar {
            shape,
            num_samples: 2,
            seed: 1,
            sampler: "gibbs".into(),
            thinning: 1,
            model_hash: model_hash(&ModelParams::zeros(shape)),
        };
        write_samples(&path, &ds, &side).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("x0\tx1\tx2\n-1\t1\t1\n"));
        assert_eq!(read_samples(&path, None).unwrap(), ds);
        assert_eq!(read_sidecar(&path).unwrap().unwrap(), side);
    }

    #[test]
    fn weights_and_inference() {
        let p = Path::new("mem.tsv");
        let ds = parse_samples(p, "x0\tx1\tweight\n0\t2\t0.5\n1\t0\t1.5\n", None).unwrap();
        assert_eq!(ds.shape(), ModelShape::potts(2, 3).unwrap());
        assert_eq!(ds.weights(), &[0.5, 1.5]);
        let back = parse_samples(p, &samples_to_tsv(&ds), Some(ds.shape())).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn parse_errors_carry_line() {
        let p = Path::new("mem.tsv");
        match parse_samples(p, "x0\tx1\n1\t-1\n1\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_samples(p, "x0\n", None), Err(Error::EmptyDataset)));
        assert!(matches!(parse_samples(p, "", None), Err(Error::EmptyDataset)));
    }
}
