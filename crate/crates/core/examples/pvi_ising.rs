//! Persistent VI under a noncentered Horseshoe on a diluted spin glass,
//! compared with L1 pseudolikelihood at its cross-validated strength.

use fadeout::baselines::{cross_validate, fit_pl, fit_pl_from, CvPlan, RegularizerKind, RegularizerSpec, SolverOptions};
use fadeout::cli::coupling_rmse;
use fadeout::data::{generate_system, sample_system, SamplingPlan, SyntheticSystemSpec, SystemKind};
use fadeout::prior::HyperPriorSpec;
use fadeout::vi::{pvi_fadeout_fit, FitConfig};

fn main() -> fadeout::Result<()> {
    let truth = generate_system(&SyntheticSystemSpec { kind: SystemKind::diluted_sk(20, 2.0), seed: 4 })?;
    let (ds, _) = sample_system(&truth, &SamplingPlan::new(500, 11))?;

    let config = FitConfig { iterations: 10_000, ..FitConfig::ising_paper() };
    let report = pvi_fadeout_fit(&ds.expectations(), ds.n_eff(), &HyperPriorSpec::horseshoe(), &config)?;
    println!(
        "PVI-{} horseshoe: coupling RMSE {:.4} after {} iterations ({} sweeps)",
        config.sweeps,
        coupling_rmse(&report.estimate, &truth)?,
        report.iterations,
        report.sweeps
    );

    let solver = SolverOptions::default();
    let l1 = RegularizerSpec::new(RegularizerKind::L1, 1.0);
    let cv = cross_validate(
        |d, lambda, warm| Ok(fit_pl_from(d, &l1.with_lambda(lambda), &solver, warm)?.params),
        &ds,
        &CvPlan::new(10, CvPlan::ising_grid(), 0),
    )?;
    let pl = fit_pl(&ds, &l1.with_lambda(cv.best_lambda), &solver)?;
    println!(
        "PL + L1 (lambda {:.3}): coupling RMSE {:.4}",
        cv.best_lambda,
        coupling_rmse(&pl.params, &truth)?
    );
    Ok(())
}
