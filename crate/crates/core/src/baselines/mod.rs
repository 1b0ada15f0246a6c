//! Point-estimate comparators and penalty selection.

mod cv;
mod mpf;
mod pcd;
mod penalized;
mod pseudolikelihood;

pub use cv::{cross_validate, fold_assignment, CvPlan, CvResult};
pub use mpf::{fit_mpf, mpf_objective};
pub use pcd::{fit_pcd, PcdFit};
pub use penalized::{fit_pl, fit_pl_from, PointFit, RegularizerKind, RegularizerSpec, SolverOptions};
pub use pseudolikelihood::{pseudolikelihood, pseudolikelihood_value};
