//! Sequence preprocessing: parse a FASTA alignment, reweight similar
//! sequences and estimate the effective sample size from mutual information.
//!
//! Pass a FASTA path to use your own alignment; otherwise a random family is
//! simulated.

use fadeout::data::{
    estimate_neff, parse_alignment, read_alignment, reweight_sequences, AlignmentOptions, NeffConfig,
    AMINO_ACIDS, DEFAULT_REWEIGHT_THRESHOLD,
};
use rand::{Rng, SeedableRng};

fn simulated_family() -> String {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let letters: Vec<char> = AMINO_ACIDS.chars().collect();
    let ancestor: Vec<char> = (0..40).map(|_| letters[rng.random_range(0..20)]).collect();
    let mut fasta = String::new();
    for k in 0..300 {
        // Clusters of near-duplicates inflate the raw count.
        let parent = k / 3;
        let mut child_rng = rand_chacha::ChaCha8Rng::seed_from_u64(parent as u64);
        let mut seq: Vec<char> = ancestor
            .iter()
            .map(|&c| if child_rng.random::<f64>() < 0.4 { letters[child_rng.random_range(0..20)] } else { c })
            .collect();
        if rng.random::<f64>() < 0.2 {
            seq[rng.random_range(0..40)] = '-';
        }
        fasta.push_str(&format!(">seq{k}\n{}\n", seq.iter().collect::<String>()));
    }
    fasta
}

fn main() -> fadeout::Result<()> {
    let options = AlignmentOptions::default();
    let ds = match std::env::args().nth(1) {
        Some(path) => read_alignment(path.as_ref(), &options)?,
        None => parse_alignment(&simulated_family(), "simulated", &options)?,
    };
    println!("{} sequences, {} columns, q = {}", ds.len(), ds.shape().sites(), ds.shape().states());

    let weights = reweight_sequences(ds.samples(), DEFAULT_REWEIGHT_THRESHOLD)?;
    let ds = ds.with_weights(weights)?;
    println!("weight total after reweighting: {:.1}", ds.weight_sum());

    let est = estimate_neff(&ds, &NeffConfig::default())?;
    println!("mutual-information N_eff: {:.1} (converged: {})", est.n_eff, est.converged);
    for w in est.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
