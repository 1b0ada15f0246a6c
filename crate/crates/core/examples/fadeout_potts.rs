//! Group Horseshoe on a small synthetic Potts protein. Prints the strongest
//! inferred pairs next to the polymer contacts they should recover.

use fadeout::baselines::pseudolikelihood_value;
use fadeout::data::{
    evaluate_contacts, generate_system_with_truth, rank_pairs, sample_system, SamplingPlan, SyntheticSystemSpec,
    SystemKind,
};
use fadeout::prior::HyperPriorSpec;
use fadeout::vi::{pvi_fadeout_fit, FitConfig};

fn main() -> fadeout::Result<()> {
    let sys = generate_system_with_truth(&SyntheticSystemSpec { kind: SystemKind::potts_protein(10, 4), seed: 2 })?;
    let mut plan = SamplingPlan::new(600, 5);
    plan.thinning = Some(50);
    let (all, _) = sample_system(&sys.params, &plan)?;
    let train = all.subset(&(0..300).collect::<Vec<_>>())?;
    let test = all.subset(&(300..600).collect::<Vec<_>>())?;

    let config = FitConfig { iterations: 2000, draws: 4, ..FitConfig::potts_paper() };
    let report = pvi_fadeout_fit(&train.expectations(), train.n_eff(), &HyperPriorSpec::group_horseshoe(), &config)?;

    let shape = sys.params.shape();
    let pairs: Vec<(usize, usize)> = shape.pairs().collect();
    let norms = report.estimate.coupling_norms();
    println!("top pairs by coupling norm:");
    for &p in rank_pairs(&report.estimate).iter().take(8) {
        let (i, j) = pairs[p];
        let mark = if sys.truth.is_contact_pair(p) { "contact" } else { "" };
        println!("  ({i:>2}, {j:>2})  {:.3}  {mark}", norms[p]);
    }
    let k = sys.truth.num_contacts();
    let precision = evaluate_contacts(&report.estimate, &sys.truth, k)?;
    println!("precision at {k}: {:.2}", precision.last().copied().unwrap_or(0.0));
    println!("held-out log-pseudolikelihood: {:.3}", pseudolikelihood_value(&report.estimate, &test)?);
    Ok(())
}
