//! Resolved command configurations and their execution.
//!
//! A `RunConfig` holds every setting a command used, so running it again
//! from a manifest needs no flags, presets or config files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    cross_validate, fit_mpf, fit_pcd, fit_pl, fit_pl_from, pseudolikelihood_value, CvPlan, CvResult,
    RegularizerKind, RegularizerSpec, SolverOptions,
};
use crate::data::{
    estimate_neff, evaluate_contacts, generate_system_with_truth, read_alignment, read_samples, reweight_sequences,
    sample_system, sidecar_path, write_samples, AlignmentOptions, ContactTruth, NeffConfig, SampleSidecar,
    SamplingPlan, SyntheticSystemSpec, WeightedDataset, DEFAULT_CONTACT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, CheckKind, GradcheckOptions};
use crate::model::ModelParams;
use crate::prior::HyperPriorSpec;
use crate::rng::{streams, substream_seed};
use crate::vi::{FitConfig, FlatPrior, Method, MrfFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Generate(GenerateConfig),
    Fit(FitRunConfig),
    Eval(EvalConfig),
    Gradcheck(GradcheckOptions),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Generate(_) => "generate",
            Self::Fit(_) => "fit",
            Self::Eval(_) => "eval",
            Self::Gradcheck(_) => "gradcheck",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Generate(c) => c.system.seed,
            Self::Fit(c) => c.seed,
            Self::Eval(_) => 0,
            Self::Gradcheck(c) => c.seed,
        }
    }

    /// Files read by the command.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Self::Generate(_) | Self::Gradcheck(_) => Vec::new(),
            Self::Fit(c) => c.input.samples.iter().chain(&c.input.alignment).cloned().collect(),
            Self::Eval(c) => c
                .fits
                .iter()
                .flat_map(|f| {
                    let mut v = vec![f.params.clone()];
                    v.extend(f.summary.clone());
                    v
                })
                .chain(c.truth.clone())
                .chain(c.contacts.clone())
                .chain(c.test.clone())
                .collect(),
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Paths relative to the run directory.
    pub outputs: Vec<PathBuf>,
    /// Exit status when the command ran but a check failed.
    pub failed: bool,
}

impl Outcome {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        std::fs::write(dir.join(name), contents)?;
        self.outputs.push(PathBuf::from(name));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, value: &T) -> Result<()> {
        self.write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

pub fn execute(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(dir)?;
    match config {
        RunConfig::Generate(c) => generate(c, dir),
        RunConfig::Fit(c) => fit(c, dir),
        RunConfig::Eval(c) => eval(c, dir),
        RunConfig::Gradcheck(c) => gradcheck(c, dir),
    }
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub system: SyntheticSystemSpec,
    /// No samples are drawn when absent.
    pub samples: Option<usize>,
    pub thinning: Option<usize>,
    pub burn_in: usize,
}

fn generate(c: &GenerateConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let sys = generate_system_with_truth(&c.system)?;
    eprintln!(
        "generated {} sites, {} states, {} true contacts",
        sys.params.shape().sites(),
        sys.params.shape().states(),
        sys.truth.num_contacts()
    );
    out.write_json(dir, "model.json", &sys.params)?;
    sys.truth.write_tsv(&dir.join("truth.tsv"))?;
    out.outputs.push("truth.tsv".into());
    if let Some(n) = c.samples {
        let seed = substream_seed(c.system.seed, streams::SAMPLER);
        let plan = SamplingPlan { num_samples: n, thinning: c.thinning, burn_in: c.burn_in, seed };
        let (ds, thinning) = sample_system(&sys.params, &plan)?;
        let sidecar = SampleSidecar {
            shape: sys.params.shape(),
            num_samples: n,
            seed,
            sampler: if sys.params.shape().is_ising() { "swendsen_wang" } else { "gibbs" }.into(),
            thinning,
            model_hash: crate::data::model_hash(&sys.params),
        };
        let path = dir.join("samples.tsv");
        write_samples(&path, &ds, &sidecar)?;
        out.outputs.push("samples.tsv".into());
        out.outputs.push(sidecar_path(Path::new("samples.tsv")));
        eprintln!("drew {n} samples, thinning {thinning}");
    }
    Ok(out)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    PviFadeout,
    Pvi,
    PlL2,
    PlL1,
    PlGroupL1,
    Pcd,
    Mpf,
}

impl FitMethod {
    pub fn label(self) -> &'static str {
        match self {
            Self::PviFadeout => "pvi-fadeout",
            Self::Pvi => "pvi",
            Self::PlL2 => "pl-l2",
            Self::PlL1 => "pl-l1",
            Self::PlGroupL1 => "pl-group-l1",
            Self::Pcd => "pcd",
            Self::Mpf => "mpf",
        }
    }

    /// Penalty fixed by the method name, if any.
    fn fixed_penalty(self) -> Option<RegularizerKind> {
        match self {
            Self::PlL2 => Some(RegularizerKind::L2),
            Self::PlL1 => Some(RegularizerKind::L1),
            Self::PlGroupL1 => Some(RegularizerKind::GroupL1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InputSpec {
    /// Sample TSV.
    pub samples: Option<PathBuf>,
    /// FASTA alignment.
    pub alignment: Option<PathBuf>,
    pub alignment_options: AlignmentOptions,
    /// Hamming similarity threshold for sequence reweighting.
    pub reweight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeffChoice {
    /// Weight total of the dataset.
    #[default]
    Data,
    Value(f64),
    Auto(NeffConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRunConfig {
    pub input: InputSpec,
    pub method: FitMethod,
    /// Hyperprior for `pvi-fadeout`.
    pub prior: HyperPriorSpec,
    /// Prior for `pvi`.
    pub flat_prior: FlatPrior,
    pub vi: FitConfig,
    /// Penalty for `pcd` and `mpf`; the `pl-*` methods override the kind.
    pub penalty: RegularizerSpec,
    pub cv: Option<CvPlan>,
    pub solver: SolverOptions,
    pub n_eff: NeffChoice,
    pub seed: u64,
    /// Also write gradient-norm and CV-curve TSVs.
    pub emit_plot_data: bool,
}

impl Default for FitRunConfig {
    fn default() -> Self {
        Self {
            input: InputSpec::default(),
            method: FitMethod::PviFadeout,
            prior: HyperPriorSpec::horseshoe(),
            flat_prior: FlatPrior::Flat,
            vi: FitConfig::default(),
            penalty: RegularizerSpec::new(RegularizerKind::L1, 1.0),
            cv: None,
            solver: SolverOptions::default(),
            n_eff: NeffChoice::Data,
            seed: 0,
            emit_plot_data: false,
        }
    }
}

impl FitRunConfig {
    fn regularizer(&self) -> RegularizerSpec {
        match self.method.fixed_penalty() {
            Some(kind) => RegularizerSpec { kind, ..self.penalty },
            None => self.penalty,
        }
    }
}

/// Side facts about a fit that `eval` reads back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: String,
    pub num_samples: usize,
    pub n_eff: f64,
    pub lambda: Option<f64>,
}

pub fn load_dataset(input: &InputSpec) -> Result<WeightedDataset> {
    let ds = match (&input.samples, &input.alignment) {
        (Some(p), None) => read_samples(p, None)?,
        (None, Some(p)) => read_alignment(p, &input.alignment_options)?,
        _ => return Err(Error::Config("give exactly one of a sample TSV or an alignment".into())),
    };
    match input.reweight {
        Some(t) => {
            let w = reweight_sequences(ds.samples(), t)?;
            ds.with_weights(w)
        }
        None => Ok(ds),
    }
}

fn fit(c: &FitRunConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut ds = load_dataset(&c.input)?;
    eprintln!("loaded {} samples over {} sites", ds.len(), ds.shape().sites());
    match &c.n_eff {
        NeffChoice::Data => {}
        NeffChoice::Value(n) => ds = ds.with_n_eff(*n)?,
        NeffChoice::Auto(cfg) => {
            let est = estimate_neff(&ds, &NeffConfig { seed: c.seed, ..*cfg })?;
            for w in &est.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("estimated N_eff = {:.1}", est.n_eff);
            ds = ds.with_n_eff(est.n_eff)?;
            out.write_json(dir, "neff.json", &est)?;
        }
    }
    let vi = FitConfig { seed: c.seed, ..c.vi.clone() };
    let mut reg = c.regularizer();
    let mut cv_result: Option<CvResult> = None;
    if let Some(plan) = &c.cv {
        let plan = CvPlan { seed: c.seed, ..plan.clone() };
        let solver = c.solver;
        let result = match c.method {
            FitMethod::Mpf => cross_validate(
                |d: &WeightedDataset, l: f64, _: Option<&ModelParams>| Ok(fit_mpf(d, &reg.with_lambda(l), &solver)?.params),
                &ds,
                &plan,
            )?,
            FitMethod::PviFadeout | FitMethod::Pvi => {
                return Err(Error::Config(format!("{} has no penalty to cross-validate", c.method.label())))
            }
            // PCD takes the lambda chosen for penalized pseudolikelihood.
            _ => cross_validate(
                |d: &WeightedDataset, l: f64, w: Option<&ModelParams>| {
                    Ok(fit_pl_from(d, &reg.with_lambda(l), &solver, w)?.params)
                },
                &ds,
                &plan,
            )?,
        };
        eprintln!("cross-validation selected lambda = {}", result.best_lambda);
        reg = reg.with_lambda(result.best_lambda);
        out.write_json(dir, "cv.json", &result)?;
        cv_result = Some(result);
    }
    let (params, trace) = match c.method {
        FitMethod::PviFadeout | FitMethod::Pvi => {
            let method = match c.method {
                FitMethod::Pvi => Method::Pvi { prior: c.flat_prior },
                _ => Method::Fadeout { spec: c.prior },
            };
            let report = MrfFit::new(&ds.expectations(), ds.n_eff(), method, vi)?.run()?;
            out.write_json(dir, "report.json", &report)?;
            (report.estimate, report.grad_norm_trace)
        }
        FitMethod::Pcd => {
            let f = fit_pcd(&ds, &reg, &vi)?;
            out.write_json(dir, "report.json", &f)?;
            (f.params, f.grad_norm_trace)
        }
        FitMethod::Mpf | FitMethod::PlL2 | FitMethod::PlL1 | FitMethod::PlGroupL1 => {
            let f = if c.method == FitMethod::Mpf { fit_mpf(&ds, &reg, &c.solver)? } else { fit_pl(&ds, &reg, &c.solver)? };
            for w in &f.warnings {
                eprintln!("warning: {w}");
            }
            out.write_json(dir, "report.json", &f)?;
            (f.params, Vec::new())
        }
    };
    out.write_json(dir, "params.json", &params)?;
    let penalized = !matches!(c.method, FitMethod::PviFadeout | FitMethod::Pvi);
    let summary = FitSummary {
        method: c.method.label().into(),
        num_samples: ds.len(),
        n_eff: ds.n_eff(),
        lambda: penalized.then_some(reg.lambda),
    };
    out.write_json(dir, "summary.json", &summary)?;
    if c.emit_plot_data && !trace.is_empty() {
        let mut s = String::from("iteration\tgrad_norm\n");
        for (t, g) in trace.iter().enumerate() {
            writeln!(s, "{t}\t{g}").unwrap();
        }
        out.write(dir, "trace.tsv", &s)?;
    }
    if let Some(r) = cv_result {
        if c.emit_plot_data {
            let mut s = String::from("lambda\theldout_log_pl\n");
            for (l, v) in r.scores {
                writeln!(s, "{l}\t{v}").unwrap();
            }
            out.write(dir, "cv_curve.tsv", &s)?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub name: String,
    pub params: PathBuf,
    /// `summary.json` from the fit's run directory, when present.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub fits: Vec<NamedFit>,
    /// Generator parameters.
    pub truth: Option<PathBuf>,
    /// `i, j, distance` contact table; otherwise the truth's nonzero blocks.
    pub contacts: Option<PathBuf>,
    pub contact_threshold: f64,
    /// Held-out sample TSV.
    pub test: Option<PathBuf>,
    /// Precision cutoff; defaults to the number of true contacts.
    pub top_k: Option<usize>,
    /// Also write precision-vs-rank and error-vs-N TSVs.
    pub emit_plot_data: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fits: Vec::new(),
            truth: None,
            contacts: None,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            test: None,
            top_k: None,
            emit_plot_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub num_samples: Option<usize>,
    /// Root-mean-square error over coupling entries.
    pub rmse: Option<f64>,
    /// Average per-sequence log-pseudolikelihood on the test set.
    pub test_log_pl: Option<f64>,
    pub precision_at_k: Option<f64>,
    #[serde(skip)]
    pub precision_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub top_k: Option<usize>,
    pub rows: Vec<EvalRow>,
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn coupling_rmse(fit: &ModelParams, truth: &ModelParams) -> Result<f64> {
    crate::model::check_same_shape(fit.shape(), truth.shape())?;
    let (a, b) = (fit.couplings(), truth.couplings());
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

fn na<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn eval(c: &EvalConfig, dir: &Path) -> Result<Outcome> {
    if c.fits.is_empty() {
        return Err(Error::Config("eval needs at least one fit".into()));
    }
    let mut out = Outcome::default();
    let truth = c.truth.as_deref().map(read_params).transpose()?;
    let fits = c
        .fits
        .iter()
        .map(|f| read_params(&f.params))
        .collect::<Result<Vec<_>>>()?;
    let sites = fits[0].shape().sites();
    let contacts = match (&c.contacts, &truth) {
        (Some(p), _) => Some(ContactTruth::read_tsv(p, sites, c.contact_threshold)?),
        (None, Some(t)) => {
            let norms = t.coupling_norms();
            let pairs: Vec<(usize, usize)> =
                t.shape().pairs().enumerate().filter(|(p, _)| norms[*p] > 0.0).map(|(_, ij)| ij).collect();
            Some(ContactTruth::from_adjacency(t.shape().sites(), &pairs)?)
        }
        (None, None) => None,
    };
    let top_k = c.top_k.or(contacts.as_ref().map(|t| t.num_contacts().max(1)));
    let mut rows = Vec::new();
    for (f, params) in c.fits.iter().zip(&fits) {
        let summary: Option<FitSummary> = match &f.summary {
            Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        let rmse = truth.as_ref().map(|t| coupling_rmse(params, t)).transpose()?;
        let test_log_pl = match &c.test {
            Some(p) => Some(pseudolikelihood_value(params, &read_samples(p, Some(params.shape()))?)?),
            None => None,
        };
        let curve = match (&contacts, top_k) {
            (Some(t), Some(k)) => evaluate_contacts(params, t, k)?,
            _ => Vec::new(),
        };
        rows.push(EvalRow {
            method: f.name.clone(),
            num_samples: summary.map(|s| s.num_samples),
            rmse,
            test_log_pl,
            precision_at_k: curve.last().copied(),
            precision_curve: curve,
        });
    }
    let mut tsv = String::from("method\tnum_samples\trmse\ttest_log_pl\tprecision_at_k\n");
    for r in &rows {
        writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            r.method,
            na(r.num_samples),
            na(r.rmse),
            na(r.test_log_pl),
            na(r.precision_at_k)
        )
        .unwrap();
    }
    out.write(dir, "metrics.tsv", &tsv)?;
    if c.emit_plot_data {
        let mut s = String::from("method\trank\tprecision\n");
        for r in &rows {
            for (k, p) in r.precision_curve.iter().enumerate() {
                writeln!(s, "{}\t{}\t{p}", r.method, k + 1).unwrap();
            }
        }
        out.write(dir, "precision_curve.tsv", &s)?;
        let mut s = String::from("method\tnum_samples\trmse\n");
        for r in rows.iter().filter(|r| r.rmse.is_some()) {
            writeln!(s, "{}\t{}\t{}", r.method, na(r.num_samples), na(r.rmse)).unwrap();
        }
        out.write(dir, "error_vs_n.tsv", &s)?;
    }
    out.write_json(dir, "summary.json", &EvalSummary { top_k, rows })?;
    Ok(out)
}

// ---------------------------------------------------------------- gradcheck

fn gradcheck(c: &GradcheckOptions, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let report = run_gradcheck(c)?;
    if let Some(f) = &c.inject_fault {
        if !report.checks.iter().any(|r| &r.block == f) {
            return Err(Error::Config(format!("no checked block is named {f:?}")));
        }
    }
    out.write_json(dir, "gradcheck.json", &report)?;
    for check in &report.checks {
        eprintln!(
            "{:<4} {:<13} {}/{} worst {:.3e} (threshold {:.3e})",
            if check.passed { "ok" } else { "FAIL" },
            match check.kind {
                CheckKind::Deterministic => "deterministic",
                CheckKind::Stochastic => "stochastic",
            },
            check.suite,
            check.block,
            check.worst,
            check.threshold
        );
    }
    for kind in [CheckKind::Deterministic, CheckKind::Stochastic] {
        let failed = report.failures(kind);
        if !failed.is_empty() {
            let names: Vec<String> = failed.iter().map(|f| format!("{}/{}", f.suite, f.block)).collect();
            eprintln!("{kind:?} failures: {}", names.join(", "));
        }
    }
    out.failed = !report.passed();
    Ok(out)
}
