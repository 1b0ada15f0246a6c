//! FASTA-style protein alignments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::ModelShape;

pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";
/// State index of the gap symbol.
pub const GAP_STATE: u8 = 20;
const NONSTANDARD: &str = "BJOUXZ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentOptions {
    /// Sequences with a larger gap fraction are dropped.
    pub max_gap_fraction: f64,
    /// Keep gaps as a 21st state; otherwise sequences with gaps are dropped.
    pub gap_as_state: bool,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        Self { max_gap_fraction: 0.25, gap_as_state: true }
    }
}

fn encode(c: char) -> Option<u8> {
    let c = c.to_ascii_uppercase();
    if let Some(k) = AMINO_ACIDS.find(c) {
        Some(k as u8)
    } else if c == '-' || c == '.' || NONSTANDARD.contains(c) {
        Some(GAP_STATE)
    } else {
        None
    }
}

/// Parses alignment text. `origin` labels parse errors.
pub fn parse_alignment(text: &str, origin: &str, options: &AlignmentOptions) -> Result<WeightedDataset> {
    if !(0.0..=1.0).contains(&options.max_gap_fraction) {
        return Err(Error::Config(format!("max_gap_fraction must lie in [0, 1], got {}", options.max_gap_fraction)));
    }
    let parse_err = |line: usize, message: String| Error::Parse { path: origin.into(), line, message };
    let mut records: Vec<(usize, Vec<u8>)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('>') {
            records.push((k + 1, Vec::new()));
            continue;
        }
        let Some((_, seq)) = records.last_mut() else {
            return Err(parse_err(k + 1, "sequence data before the first '>' header".into()));
        };
        for c in line.chars() {
            match encode(c) {
                Some(s) => seq.push(s),
                None => return Err(parse_err(k + 1, format!("invalid alignment character {c:?}"))),
            }
        }
    }
    let Some((_, first)) = records.first() else {
        return Err(Error::EmptyDataset);
    };
    let width = first.len();
    if width == 0 {
        return Err(parse_err(records[0].0, "empty sequence".into()));
    }
    if let Some((line, seq)) = records.iter().find(|(_, s)| s.len() != width) {
        return Err(Error::Shape(format!(
            "sequence at line {line} has {} columns, expected {width}",
            seq.len()
        )));
    }
    let kept: Vec<Vec<u8>> = records
        .into_iter()
        .map(|(_, s)| s)
        .filter(|s| {
            let gaps = s.iter().filter(|&&v| v == GAP_STATE).count();
            if options.gap_as_state {
                gaps as f64 / width as f64 <= options.max_gap_fraction
            } else {
                gaps == 0
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let states = if options.gap_as_state { 21 } else { 20 };
    WeightedDataset::new(ModelShape::potts(width, states)?, &kept)
}

pub fn read_alignment(path: &Path, options: &AlignmentOptions) -> Result<WeightedDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_alignment(&text, &path.display().to_string(), options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        let ds = parse_alignment(">a\nACDEFGHIKL\n>b\nACDEF\nGHIKL\n", "t", &AlignmentOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), ModelShape::potts(10, 21).unwrap());
        assert_eq!(ds.weights(), &[1.0, 1.0]);
        assert_eq!(ds.sample(1), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn gaps_and_filters() {
        let text = ">a\nAC-D\n>b\nA..D\n>c\nacxd\n";
        let ds = parse_alignment(text, "t", &AlignmentOptions::default()).unwrap();
        // b has half its columns gapped
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample(1), &[0, 1, GAP_STATE, 2]);
        let strict = AlignmentOptions { gap_as_state: false, ..Default::default() };
        assert!(matches!(parse_alignment(text, "t", &strict), Err(Error::EmptyDataset)));
        let ds = parse_alignment(">a\nACD\n>b\nAC-\n", "t", &strict).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.shape().states(), 20);
    }

    #[test]
    fn errors() {
        let opts = AlignmentOptions::default();
        assert!(matches!(parse_alignment("", "t", &opts), Err(Error::EmptyDataset)));
        match parse_alignment(">a\nAC\n>b\nA1\n", "t", &opts) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_alignment(">a\nACD\n>b\nAC\n", "t", &opts), Err(Error::Shape(_))));
        assert!(matches!(parse_alignment("ACD\n", "t", &opts), Err(Error::Parse { line: 1, .. })));
    }
}
