//! Point-estimation baselines on one dataset: penalized pseudolikelihood with
//! each penalty, minimum probability flow and persistent contrastive divergence.

use fadeout::baselines::{
    cross_validate, fit_mpf, fit_pcd, fit_pl, fit_pl_from, CvPlan, RegularizerKind, RegularizerSpec, SolverOptions,
};
use fadeout::cli::coupling_rmse;
use fadeout::data::{generate_system, sample_system, SamplingPlan, SyntheticSystemSpec, SystemKind};
use fadeout::vi::{FitConfig, OptimizerConfig};

fn main() -> fadeout::Result<()> {
    let truth = generate_system(&SyntheticSystemSpec { kind: SystemKind::lattice(3, 2, 0.2), seed: 0 })?;
    let (ds, _) = sample_system(&truth, &SamplingPlan::new(1000, 1))?;
    let solver = SolverOptions::default();

    for kind in [RegularizerKind::L2, RegularizerKind::L1, RegularizerKind::GroupL1] {
        let reg = RegularizerSpec::new(kind, 1.0);
        let cv = cross_validate(
            |d, l, warm| Ok(fit_pl_from(d, &reg.with_lambda(l), &solver, warm)?.params),
            &ds,
            &CvPlan::new(5, CvPlan::ising_grid(), 0),
        )?;
        let fit = fit_pl(&ds, &reg.with_lambda(cv.best_lambda), &solver)?;
        println!(
            "PL {kind:?}: lambda {:.3}, {} FISTA iterations, RMSE {:.4}",
            cv.best_lambda,
            fit.iterations,
            coupling_rmse(&fit.params, &truth)?
        );
    }

    let mpf = fit_mpf(&ds, &RegularizerSpec::new(RegularizerKind::L1, 1.0), &solver)?;
    println!("MPF L1: RMSE {:.4}", coupling_rmse(&mpf.params, &truth)?);

    let config = FitConfig {
        iterations: 5000,
        optimizer: OptimizerConfig::RobbinsMonro { a: 10.0, b: 100.0, kappa: 1.0 },
        ..FitConfig::ising_paper()
    };
    let pcd = fit_pcd(&ds, &RegularizerSpec::new(RegularizerKind::L1, 1.0), &config)?;
    println!("PCD L1: RMSE {:.4}", coupling_rmse(&pcd.params, &truth)?);
    Ok(())
}
