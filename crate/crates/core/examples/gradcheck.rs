//! Runs every analytic-gradient and sampler oracle check and prints the
//! worst error per block.

use fadeout::gradcheck::{run_gradcheck, GradcheckOptions};

fn main() -> fadeout::Result<()> {
    let report = run_gradcheck(&GradcheckOptions::default())?;
    for c in &report.checks {
        println!(
            "{:>4}  {:?}  {}/{}: worst {:.2e} over {} instances (threshold {:.1e})",
            if c.passed { "ok" } else { "FAIL" },
            c.kind,
            c.suite,
            c.block,
            c.worst,
            c.instances,
            c.threshold
        );
    }
    std::process::exit(if report.passed() { 0 } else { 1 });
}
