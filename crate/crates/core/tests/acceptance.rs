//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::path::Path;
use std::time::Instant;

use fadeout::baselines::{
    cross_validate, fit_pcd, fit_pl, fit_pl_from, pseudolikelihood_value, CvPlan, RegularizerKind, RegularizerSpec,
    SolverOptions,
};
use fadeout::cli::{self, coupling_rmse, RunManifest};
use fadeout::data::{
    estimate_neff, evaluate_contacts, generate_system_with_truth, sample_system, NeffConfig, SamplingPlan,
    SyntheticSystemSpec, SystemKind, WeightedDataset,
};
use fadeout::gradcheck::{bonferroni_threshold, run_gradcheck, CheckKind, GradcheckOptions};
use fadeout::model::{enumerate_distribution, ModelParams, ModelShape};
use fadeout::prior::HyperPriorSpec;
use fadeout::sampler::{gibbs_sample, swendsen_wang_sample};
use fadeout::vi::{pvi_fadeout_fit, pvi_fit, ExpectationMode, FitConfig, FlatPrior, OptimizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("[{id}] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn random_params(shape: ModelShape, scale: f64, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, scale).unwrap();
    let v = (0..shape.num_params()).map(|_| n.sample(&mut rng)).collect();
    ModelParams::from_vec(shape, v).unwrap()
}

#[test]
fn gradient_oracles() {
    let start = Instant::now();
    let opts = GradcheckOptions { instances: 100, seed: 11, ..GradcheckOptions::default() };
    let rep = run_gradcheck(&opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let det: Vec<_> = rep.checks.iter().filter(|c| c.kind == CheckKind::Deterministic).collect();
    let worst = det.iter().map(|c| c.worst).fold(0.0, f64::max);
    let enough = det.iter().all(|c| c.instances >= 100);
    let suites: std::collections::BTreeSet<_> = det.iter().map(|c| c.suite.as_str()).collect();
    let pass = det.iter().all(|c| c.passed) && enough && worst < 1e-6 && secs < 120.0;
    report(
        1,
        "gradient oracles",
        pass,
        &format!("{} blocks over {:?}, worst relative error {worst:.2e}, {secs:.1}s", det.len(), suites),
    );
    assert!(pass);
}

/// Largest |empirical - exact| / batch-means s.e. over all features, and TV distance.
fn sampler_check(params: &ModelParams, rows: &[Vec<u8>]) -> (f64, f64, usize) {
    let shape = params.shape();
    let en = enumerate_distribution(params).unwrap();
    let exact = en.expectations();
    let z = fadeout::gradcheck::standard_error_multiple(params, rows, 50, &exact).unwrap();
    let mut counts = vec![0u64; en.probs.len()];
    for x in rows {
        counts[en.index_of(x)] += 1;
    }
    let n = rows.len() as f64;
    let tv = 0.5 * counts.iter().zip(&en.probs).map(|(&c, p)| (c as f64 / n - p).abs()).sum::<f64>();
    (z, tv, exact.as_slice().len().min(shape.num_params()))
}

#[test]
fn sampler_oracles() {
    let start = Instant::now();
    let samples = 1_000_000;
    let ising = random_params(ModelShape::ising(10).unwrap(), 0.3, 1);
    let potts = random_params(ModelShape::potts(5, 4).unwrap(), 0.4, 2);
    let runs: Vec<(&str, &ModelParams, Vec<Vec<u8>>)> = vec![
        ("gibbs ising D=10", &ising, gibbs_sample(&ising, 50, samples, 200, 3, 3).unwrap()),
        ("swendsen-wang ising D=10", &ising, swendsen_wang_sample(&ising, samples, 3, 4).unwrap()),
        ("gibbs potts D=5 q=4", &potts, gibbs_sample(&potts, 50, samples, 200, 3, 5).unwrap()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, params, rows) in &runs {
        let (z, tv, k) = sampler_check(params, rows);
        let z_max = bonferroni_threshold(k);
        pass &= z < z_max && tv < 0.02;
        detail.push(format!("{name}: max z {z:.2} (limit {z_max:.2}), TV {tv:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    detail.push(format!("{secs:.1}s"));
    report(2, "sampler oracles", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn exact_fixed_point() {
    let start = Instant::now();
    let shape = ModelShape::ising(3).unwrap();
    let truth = ModelParams::from_parts(shape, &[0.2, -0.3, 0.1], &[0.4, -0.2, 0.3]).unwrap();
    let data = enumerate_distribution(&truth).unwrap().expectations();
    let n = 50.0;
    let config = FitConfig {
        iterations: 4_000_000,
        draws: 1,
        expectations: ExpectationMode::Exact,
        optimizer: OptimizerConfig::RobbinsMonro { a: 0.5, b: 25.0, kappa: 1.0 },
        seed: 3,
        ..FitConfig::ising_paper()
    };
    let rep = pvi_fit(&data, n, FlatPrior::Flat, &config).unwrap();
    let mu = &rep.state.mu_theta;
    let sigma: Vec<f64> = rep.state.s_theta.iter().map(|s| s.exp()).collect();
    let (ef, eef) = common::extended_moments(shape, mu, &sigma, 10);
    let mm = ef.iter().zip(data.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rel = sigma
        .iter()
        .zip(&eef)
        .map(|(s, e)| (s - 1.0 / (n * e)).abs() * (n * e))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = mm < 1e-3 && rel < 0.05 && secs < 60.0;
    report(3, "exact-gradient fixed point", pass, &format!("moment gap {mm:.2e}, sigma rel. error {rel:.2e}, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn large_n_bridges_to_ml() {
    let shape = ModelShape::ising(4).unwrap();
    let truth = random_params(shape, 0.4, 9);
    let data = enumerate_distribution(&truth).unwrap().expectations();
    let config = FitConfig {
        iterations: 10_000,
        expectations: ExpectationMode::Exact,
        seed: 1,
        ..FitConfig::ising_paper()
    };
    let rep = pvi_fit(&data, 1e6, FlatPrior::Flat, &config).unwrap();
    let err = rep.estimate.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let smax = rep.state.s_theta.iter().map(|s| s.exp()).fold(0.0, f64::max);
    let pass = err < 1e-2 && smax < 1e-2;
    report(4, "large-N bridge to maximum likelihood", pass, &format!("max |mean - ML| {err:.2e}, max sigma {smax:.2e}"));
    assert!(pass);
}

fn pl_l1_cv(ds: &WeightedDataset, seed: u64) -> (f64, ModelParams) {
    let solver = SolverOptions::default();
    let reg = RegularizerSpec::new(RegularizerKind::L1, 1.0);
    let cv = cross_validate(
        |d, l, w| Ok(fit_pl_from(d, &reg.with_lambda(l), &solver, w)?.params),
        ds,
        &CvPlan::new(10, CvPlan::ising_grid(), seed),
    )
    .unwrap();
    (cv.best_lambda, fit_pl(ds, &reg.with_lambda(cv.best_lambda), &solver).unwrap().params)
}

#[test]
fn ising_reconstruction_trend() {
    let start = Instant::now();
    let iterations = 20_000;
    let mut lines = Vec::new();
    let mut wins_per_system = Vec::new();
    for (name, kind) in [
        ("ferromagnet 3x3", SystemKind::lattice(3, 2, 0.2)),
        ("diluted SK D=20", SystemKind::diluted_sk(20, 2.0)),
    ] {
        let mut wins = 0;
        for n in [100usize, 500, 2000] {
            for seed in 0..5u64 {
                let sys = generate_system_with_truth(&SyntheticSystemSpec { kind, seed }).unwrap();
                let (ds, _) = sample_system(&sys.params, &SamplingPlan::new(n, 1000 + seed)).unwrap();
                let config = FitConfig { iterations, seed, ..FitConfig::ising_paper() };
                let pvi =
                    pvi_fadeout_fit(&ds.expectations(), ds.n_eff(), &HyperPriorSpec::horseshoe(), &config).unwrap();
                let (lambda, pl) = pl_l1_cv(&ds, seed);
                let pcd = fit_pcd(&ds, &RegularizerSpec::new(RegularizerKind::L1, lambda), &config).unwrap();
                let e = [&pvi.estimate, &pl, &pcd.params].map(|p| coupling_rmse(p, &sys.params).unwrap());
                let win = e[0] < e[1] && e[0] < e[2];
                wins += usize::from(win);
                lines.push(format!(
                    "    {name} N={n} seed={seed}: pvi {:.4} pl {:.4} pcd {:.4} (lambda {lambda:.3}) {}",
                    e[0],
                    e[1],
                    e[2],
                    if win { "win" } else { "loss" }
                ));
            }
        }
        wins_per_system.push((name, wins));
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("{l}");
    }
    let pass = wins_per_system.iter().all(|(_, w)| *w >= 13) && secs < 7200.0;
    let detail: Vec<String> = wins_per_system.iter().map(|(n, w)| format!("{n}: {w}/15 wins")).collect();
    report(5, "Ising reconstruction trend", pass, &format!("{}, {secs:.0}s", detail.join(", ")));
    assert!(pass);
}

#[test]
fn potts_heldout_ordering() {
    let start = Instant::now();
    let sys = generate_system_with_truth(&SyntheticSystemSpec { kind: SystemKind::potts_protein(16, 8), seed: 0 }).unwrap();
    let (all, _) = sample_system(&sys.params, &SamplingPlan::new(2000, 1)).unwrap();
    let train = all.subset(&(0..400).collect::<Vec<_>>()).unwrap();
    let test = all.subset(&(400..2000).collect::<Vec<_>>()).unwrap();

    let config = FitConfig { seed: 2, ..FitConfig::potts_paper() };
    let pvi = pvi_fadeout_fit(&train.expectations(), train.n_eff(), &HyperPriorSpec::group_horseshoe(), &config).unwrap();
    let solver = SolverOptions::default();
    let mut fits = vec![("pvi group horseshoe".to_string(), pvi.estimate)];
    for kind in [RegularizerKind::GroupL1, RegularizerKind::L2] {
        let reg = RegularizerSpec::new(kind, 1.0);
        let cv = cross_validate(
            |d, l, w| Ok(fit_pl_from(d, &reg.with_lambda(l), &solver, w)?.params),
            &train,
            &CvPlan::new(5, CvPlan::potts_grid(), 3),
        )
        .unwrap();
        let fit = fit_pl(&train, &reg.with_lambda(cv.best_lambda), &solver).unwrap();
        fits.push((format!("pl {kind:?} (lambda {})", cv.best_lambda), fit.params));
    }
    let nll: Vec<f64> = fits.iter().map(|(_, p)| -pseudolikelihood_value(p, &test).unwrap()).collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = nll[0] <= nll[1] && nll[1] <= nll[2] && secs < 3600.0;
    let detail: Vec<String> = fits.iter().zip(&nll).map(|((n, _), v)| format!("{n} {v:.3}")).collect();
    report(6, "Potts held-out pseudolikelihood ordering", pass, &format!("{}, {secs:.0}s", detail.join(", ")));
    assert!(pass);
}

/// Independent sites with Dirichlet(1) marginals.
fn iid_dataset(sites: usize, q: usize, n: usize, seed: u64) -> WeightedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marginals: Vec<Vec<f64>> = (0..sites)
        .map(|_| {
            let e: Vec<f64> = (0..q).map(|_| -rng.random::<f64>().ln()).collect();
            let t: f64 = e.iter().sum();
            e.iter().map(|v| v / t).collect()
        })
        .collect();
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            marginals
                .iter()
                .map(|p| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    p.iter().position(|&pk| {
                        acc += pk;
                        u < acc
                    })
                    .unwrap_or(q - 1) as u8
                })
                .collect()
        })
        .collect();
    WeightedDataset::new(ModelShape::potts(sites, q).unwrap(), &rows).unwrap()
}

#[test]
fn neff_calibration() {
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [100usize, 500, 2000] {
        let hits = (0..10u64)
            .filter(|&r| {
                let ds = iid_dataset(20, 4, n, 100 * n as u64 + r);
                let est = estimate_neff(&ds, &NeffConfig { seed: r, ..NeffConfig::default() }).unwrap();
                (est.n_eff / n as f64 - 1.0).abs() <= 0.2
            })
            .count();
        pass &= hits >= 8;
        detail.push(format!("N={n}: {hits}/10 within 20%"));
    }
    report(7, "N_eff calibration", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn sparsity() {
    // Pure noise: independent fair spins.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<u8>> = (0..2000).map(|_| (0..20).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let noise = WeightedDataset::new(ModelShape::ising(20).unwrap(), &rows).unwrap();
    let config = FitConfig { iterations: 20_000, seed: 4, ..FitConfig::ising_paper() };
    let fit = pvi_fadeout_fit(&noise.expectations(), noise.n_eff(), &HyperPriorSpec::horseshoe(), &config).unwrap();
    let big = fit.estimate.as_slice().iter().filter(|v| v.abs() > 0.1).count();
    let frac = big as f64 / fit.estimate.as_slice().len() as f64;

    let sys = generate_system_with_truth(&SyntheticSystemSpec { kind: SystemKind::potts_protein(12, 4), seed: 5 }).unwrap();
    let (ds, _) = sample_system(&sys.params, &SamplingPlan::new(2000, 6)).unwrap();
    let config = FitConfig { seed: 7, ..FitConfig::potts_paper() };
    let potts = pvi_fadeout_fit(&ds.expectations(), ds.n_eff(), &HyperPriorSpec::group_horseshoe(), &config).unwrap();
    let k = sys.truth.num_contacts();
    let precision = *evaluate_contacts(&potts.estimate, &sys.truth, k).unwrap().last().unwrap();

    let pass = frac < 0.02 && precision >= 0.8;
    report(
        8,
        "sparsity",
        pass,
        &format!("noise: {big} of {} |theta| > 0.1; Potts toy precision@{k} = {precision:.2}", fit.estimate.as_slice().len()),
    );
    assert!(pass);
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("fadeout").chain(args.iter().copied()))
}

fn replays_identically(dir: &Path, scratch: &Path) -> bool {
    let m = RunManifest::read(&dir.join("manifest.json")).unwrap();
    if run(&["replay", "--manifest", dir.join("manifest.json").to_str().unwrap(), "--out", scratch.to_str().unwrap()]) != 0 {
        return false;
    }
    m.outputs.iter().all(|o| std::fs::read(dir.join(&o.path)).unwrap() == std::fs::read(scratch.join(&o.path)).unwrap())
}

#[test]
fn replay_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let gen = p("gen");
    let potts = p("potts");
    let data = format!("{gen}/samples.tsv");
    let pdata = format!("{potts}/samples.tsv");
    let commands: Vec<(String, Vec<String>)> = vec![
        (gen.clone(), "generate --kind lattice --L 3 --dims 2 --samples 400 --seed 2".into()),
        (potts.clone(), "generate --kind potts-protein --D 6 --q 3 --samples 300 --thinning 20 --seed 4".into()),
        (p("pvi"), format!("fit --data {data} --method pvi-fadeout --iters 500 --chains 20 --seed 1")),
        (p("pvi-flat"), format!("fit --data {data} --method pvi --prior gaussian --iters 300 --seed 2")),
        (p("pl"), format!("fit --data {data} --method pl-l1 --cv 4 --seed 3")),
        (p("pcd"), format!("fit --data {data} --method pcd --lambda 2 --iters 300 --seed 4")),
        (p("mpf"), format!("fit --data {data} --method mpf --lambda 1")),
        (p("grp"), format!("fit --data {pdata} --preset potts-paper --iters 200 --neff auto --seed 5 --emit plot-data")),
        (p("l2"), format!("fit --data {pdata} --method pl-l2 --cv 3 --grid 1,10")),
        (p("ev"), format!("eval --fit pvi={} --fit pl={} --truth {gen}/model.json --test {data} --emit plot-data", p("pvi"), p("pl"))),
        (p("gc"), "gradcheck --instances 3".into()),
    ]
    .into_iter()
    .map(|(out, cmd)| {
        let mut args: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        args.extend(["--out".to_string(), out.clone()]);
        (out, args)
    })
    .collect();
    let mut bad = Vec::new();
    for (k, (out, args)) in commands.iter().enumerate() {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(run(&refs), 0, "{args:?}");
        if !replays_identically(Path::new(out), &tmp.path().join(format!("replay{k}"))) {
            bad.push(args[0].clone() + " " + out);
        }
    }
    let pass = bad.is_empty();
    report(9, "replay determinism", pass, &format!("{} runs replayed, mismatches: {bad:?}", commands.len()));
    assert!(pass);
}
