//! Inverse-neighborhood sequence weights.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default normalized Hamming threshold.
pub const DEFAULT_REWEIGHT_THRESHOLD: f64 = 0.2;

/// `w_i = 1 / |{j : hamming(x_i, x_j) / D < threshold}|`, the sequence itself included.
pub fn reweight_sequences<'a, I>(samples: I, threshold: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("Hamming threshold must lie in (0, 1), got {threshold}")));
    }
    let rows: Vec<&[u8]> = samples.into_iter().collect();
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("sequences differ in length".into()));
    }
    // hamming / d < threshold  <=>  hamming < threshold * d
    let limit = threshold * d as f64;
    Ok(rows
        .par_iter()
        .map(|a| {
            let neighbors = rows
                .iter()
                .filter(|b| (a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as f64) < limit)
                .count();
            1.0 / neighbors as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let same = [vec![1u8, 2, 3], vec![1, 2, 3], vec![1, 2, 3]];
        assert_eq!(reweight_sequences(same.iter().map(|v| v.as_slice()), 0.2).unwrap(), vec![1.0 / 3.0; 3]);
        let far = [vec![0u8, 0, 0, 0, 0], vec![1, 1, 0, 0, 0], vec![0, 0, 1, 1, 1]];
        assert_eq!(reweight_sequences(far.iter().map(|v| v.as_slice()), 0.2).unwrap(), vec![1.0; 3]);
        assert!(reweight_sequences(far.iter().map(|v| v.as_slice()), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn permutation_equivariant(rows in prop::collection::vec(prop::collection::vec(0u8..3, 6), 1..12), rot in 0usize..12) {
            let w = reweight_sequences(rows.iter().map(|v| v.as_slice()), 0.3).unwrap();
            let k = rot % rows.len();
            let mut rotated = rows.clone();
            rotated.rotate_left(k);
            let mut expect = w.clone();
            expect.rotate_left(k);
            prop_assert_eq!(reweight_sequences(rotated.iter().map(|v| v.as_slice()), 0.3).unwrap(), expect);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }
}
