//! Command-line front end.
//!
//! Every command resolves its flags into a [`RunConfig`], executes it inside
//! a run directory and writes a [`RunManifest`] next to the outputs.

mod manifest;
mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

pub use manifest::{version_string, FileRecord, RunManifest, MANIFEST_FILE};
pub use run::{
    coupling_rmse, execute, load_dataset, read_params, EvalConfig, EvalRow, EvalSummary, FitMethod, FitRunConfig,
    FitSummary, GenerateConfig, InputSpec, NamedFit, NeffChoice, Outcome, RunConfig,
};

use crate::baselines::{CvPlan, RegularizerKind};
use crate::data::{file_hash, AlignmentOptions, NeffConfig, SyntheticSystemSpec, SystemKind};
use crate::error::{Error, Result};
use crate::gradcheck::GradcheckOptions;
use crate::prior::{GlobalPrior, Grouping, HyperPriorSpec, ScaleKind};
use crate::vi::{ExpectationMode, FitConfig, FlatPrior, OptimizerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fadeout", version, about = "Bayesian inference for sparse Ising and Potts models")]
pub struct Cli {
    /// Run directory for outputs.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Extra outputs; `plot-data` writes TSVs for plotting.
    #[arg(long, global = true, value_enum)]
    pub emit: Option<Emit>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    PlotData,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic system and optionally sample from it.
    Generate(GenerateArgs),
    /// Fit a model to samples or an alignment.
    Fit(Box<FitArgs>),
    /// Score fitted parameters against truth, contacts or held-out data.
    Eval(EvalArgs),
    /// Check analytic gradients and samplers against independent oracles.
    Gradcheck(GradcheckArgs),
    /// Re-run a recorded manifest and compare outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Lattice,
    DilutedSk,
    PottsProtein,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Lattice side length.
    #[arg(long = "L")]
    pub side: Option<usize>,
    /// Lattice dimension.
    #[arg(long, default_value_t = 3)]
    pub dims: usize,
    /// Lattice coupling.
    #[arg(long = "J", default_value_t = 0.2)]
    pub coupling: f64,
    /// Number of sites.
    #[arg(long = "D")]
    pub sites: Option<usize>,
    /// Mean degree of the diluted SK graph.
    #[arg(long, default_value_t = 2.0)]
    pub degree: f64,
    /// Potts states.
    #[arg(long, default_value_t = 21)]
    pub q: usize,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Horseshoe,
    GroupHorseshoe,
    Laplace,
    StudentT,
    Gaussian,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GlobalArg {
    None,
    HalfCauchy,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    PerParameter,
    PairBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    L2,
    L1,
    GroupL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    IsingPaper,
    PottsPaper,
    ProteinPaper,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sample TSV.
    #[arg(long, conflicts_with = "alignment")]
    pub data: Option<PathBuf>,
    /// FASTA alignment.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// Drop sequences with a larger gap fraction.
    #[arg(long)]
    pub max_gap: Option<f64>,
    /// Drop gapped sequences instead of keeping gaps as a state.
    #[arg(long)]
    pub no_gap_state: bool,
    /// Reweight sequences at this similarity threshold.
    #[arg(long)]
    pub reweight: Option<f64>,
    /// Effective sample size: `auto` or a number.
    #[arg(long)]
    pub neff: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<FitMethod>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long, value_enum)]
    pub global: Option<GlobalArg>,
    #[arg(long, value_enum)]
    pub grouping: Option<GroupingArg>,
    /// Variance of the Gaussian prior for `pvi`.
    #[arg(long)]
    pub prior_variance: Option<f64>,
    /// Gibbs sweeps per gradient estimate.
    #[arg(long = "n")]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Variational draws per iteration.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Exact expectations by enumeration instead of persistent chains.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// JSON file merged over the preset; flags still win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty for `pcd` and `mpf`.
    #[arg(long, value_enum)]
    pub penalty: Option<PenaltyArg>,
    /// Cross-validation folds.
    #[arg(long)]
    pub cv: Option<usize>,
    /// Comma-separated lambda grid for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `name=path`, where path is a params JSON or a fit run directory. Repeatable.
    #[arg(long = "fit", required = true)]
    pub fits: Vec<String>,
    /// Generator parameters (model.json).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Contact table with `i, j, distance` rows.
    #[arg(long)]
    pub contacts: Option<PathBuf>,
    #[arg(long, default_value_t = crate::data::DEFAULT_CONTACT_THRESHOLD)]
    pub contact_threshold: f64,
    /// Held-out sample TSV.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Shape(_) | Error::Domain(_) | Error::Capacity { .. } | Error::Unsupported(_) | Error::Config(_) => {
            EXIT_USAGE
        }
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::EmptyDataset => EXIT_IO,
        Error::Numerical { .. } | Error::Divergence { .. } => EXIT_NUMERICAL,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let plot = cli.emit == Some(Emit::PlotData);
    let config = match &cli.command {
        Command::Generate(a) => RunConfig::Generate(generate_config(a)?),
        Command::Fit(a) => RunConfig::Fit(fit_config(a, plot)?),
        Command::Eval(a) => RunConfig::Eval(eval_config(a, plot)?),
        Command::Gradcheck(a) => RunConfig::Gradcheck(GradcheckOptions {
            tolerance: a.tolerance.unwrap_or(crate::gradcheck::DEFAULT_TOLERANCE),
            instances: a.instances.unwrap_or(GradcheckOptions::default().instances),
            seed: a.seed,
            inject_fault: a.inject_fault.clone(),
            ..GradcheckOptions::default()
        }),
        Command::Replay(a) => return replay(&a.manifest, &cli.out),
    };
    let (manifest, outcome) = record(&config, &cli.out)?;
    eprintln!("wrote {} outputs to {}", manifest.outputs.len(), cli.out.display());
    Ok(if outcome.failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}

/// Executes `config` in `dir` and writes its manifest.
pub fn record(config: &RunConfig, dir: &Path) -> Result<(RunManifest, Outcome)> {
    let inputs = config
        .inputs()
        .iter()
        .map(|p| FileRecord::of(p))
        .collect::<Result<Vec<_>>>()?;
    let start = Instant::now();
    let outcome = execute(config, dir)?;
    let wall_clock_secs = start.elapsed().as_secs_f64();
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| Ok(FileRecord { path: p.clone(), sha256: file_hash(&dir.join(p))? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command: config.name().into(),
        config: config.clone(),
        seed: config.seed(),
        version: version_string(),
        inputs,
        outputs,
        wall_clock_secs,
    };
    manifest.write(dir)?;
    Ok((manifest, outcome))
}

/// Output paths whose bytes differ between a manifest and a fresh run.
pub fn replay_mismatches(recorded: &RunManifest, fresh: &RunManifest) -> Vec<PathBuf> {
    let mut bad = Vec::new();
    for r in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == r.path) {
            Some(f) if f.sha256 == r.sha256 => {}
            _ => bad.push(r.path.clone()),
        }
    }
    bad.extend(
        fresh
            .outputs
            .iter()
            .filter(|f| !recorded.outputs.iter().any(|r| r.path == f.path))
            .map(|f| f.path.clone()),
    );
    bad
}

fn replay(path: &Path, out: &Path) -> Result<i32> {
    let recorded = RunManifest::read(path)?;
    let manifest_dir = path.parent().unwrap_or(Path::new("."));
    if out == manifest_dir || out.canonicalize().ok() == manifest_dir.canonicalize().ok() {
        return Err(Error::Config("replay needs an --out directory other than the recorded run".into()));
    }
    let mut changed = Vec::new();
    for input in &recorded.inputs {
        if file_hash(&input.path)? != input.sha256 {
            changed.push(input.path.display().to_string());
        }
    }
    if !changed.is_empty() {
        eprintln!("inputs changed since the run was recorded: {}", changed.join(", "));
        return Ok(EXIT_CHECK_FAILED);
    }
    let (fresh, _) = record(&recorded.config, out)?;
    let bad = replay_mismatches(&recorded, &fresh);
    if bad.is_empty() {
        eprintln!("replay matched all {} outputs", recorded.outputs.len());
        Ok(EXIT_OK)
    } else {
        let names: Vec<String> = bad.iter().map(|p| p.display().to_string()).collect();
        eprintln!("replay mismatch: {}", names.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}

fn require<T>(v: Option<T>, flag: &str, kind: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required for --kind {kind}")))
}

pub fn generate_config(a: &GenerateArgs) -> Result<GenerateConfig> {
    let kind = match a.kind {
        KindArg::Lattice => SystemKind::lattice(require(a.side, "L", "lattice")?, a.dims, a.coupling),
        KindArg::DilutedSk => SystemKind::diluted_sk(require(a.sites, "D", "diluted-sk")?, a.degree),
        KindArg::PottsProtein => SystemKind::potts_protein(require(a.sites, "D", "potts-protein")?, a.q),
    };
    Ok(GenerateConfig {
        system: SyntheticSystemSpec { kind, seed: a.seed },
        samples: a.samples,
        thinning: a.thinning,
        burn_in: a.burn_in,
    })
}

/// Recursively overlays `top` on `base`; objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    p.canonicalize()
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
}

fn hyperprior(prior: PriorArg, current: HyperPriorSpec) -> Result<HyperPriorSpec> {
    let kind = match prior {
        PriorArg::Horseshoe | PriorArg::GroupHorseshoe => ScaleKind::Horseshoe { scale: 1.0 },
        PriorArg::Laplace => ScaleKind::Laplacian { lambda: 1.0 },
        PriorArg::StudentT => ScaleKind::StudentT { alpha: 1.0, beta: 1.0 },
        PriorArg::Gaussian => ScaleKind::GaussianFixed { lambda: 0.5 },
        PriorArg::Flat => return Err(Error::Config("--prior flat applies to --method pvi only".into())),
    };
    let grouping = if prior == PriorArg::GroupHorseshoe { Grouping::PairBlock } else { current.grouping };
    let global = if matches!(kind, ScaleKind::GaussianFixed { .. }) { None } else { current.global };
    Ok(HyperPriorSpec { kind, global, grouping })
}

pub fn fit_config(a: &FitArgs, plot: bool) -> Result<FitRunConfig> {
    let mut base = FitRunConfig::default();
    if let Some(p) = a.preset {
        base.vi = FitConfig::preset(match p {
            PresetArg::IsingPaper => "ising_paper",
            PresetArg::PottsPaper => "potts_paper",
            PresetArg::ProteinPaper => "protein_paper",
        })?;
        if p != PresetArg::IsingPaper {
            base.prior = HyperPriorSpec::group_horseshoe();
            base.penalty.kind = RegularizerKind::GroupL1;
        }
    }
    let mut c = match &a.config {
        Some(path) => {
            let mut v = serde_json::to_value(&base)?;
            merge_json(&mut v, serde_json::from_str(&std::fs::read_to_string(path)?)?);
            serde_json::from_value(v)?
        }
        None => base,
    };

    if let Some(p) = &a.data {
        c.input = InputSpec { samples: Some(absolute(p)?), alignment: None, ..c.input };
    }
    if let Some(p) = &a.alignment {
        c.input = InputSpec { samples: None, alignment: Some(absolute(p)?), ..c.input };
    }
    if let Some(g) = a.max_gap {
        c.input.alignment_options.max_gap_fraction = g;
    }
    if a.no_gap_state {
        c.input.alignment_options = AlignmentOptions { gap_as_state: false, ..c.input.alignment_options };
    }
    if a.reweight.is_some() {
        c.input.reweight = a.reweight;
    }
    if let Some(n) = &a.neff {
        c.n_eff = match n.as_str() {
            "auto" => NeffChoice::Auto(NeffConfig::default()),
            "data" => NeffChoice::Data,
            v => NeffChoice::Value(
                v.parse().map_err(|_| Error::Config(format!("--neff expects auto or a number, got {v:?}")))?,
            ),
        };
    }
    if let Some(m) = a.method {
        c.method = m;
    }
    if let Some(g) = a.grouping {
        c.prior.grouping = match g {
            GroupingArg::PerParameter => Grouping::PerParameter,
            GroupingArg::PairBlock => Grouping::PairBlock,
        };
    }
    if let Some(g) = a.global {
        c.prior.global = match g {
            GlobalArg::None => None,
            GlobalArg::HalfCauchy => Some(GlobalPrior::HalfCauchy { scale: 1.0 }),
            GlobalArg::Exponential => Some(GlobalPrior::Exponential { rate: 1.0 }),
        };
    }
    if let Some(p) = a.prior {
        if c.method == FitMethod::Pvi {
            c.flat_prior = match p {
                PriorArg::Flat => FlatPrior::Flat,
                PriorArg::Gaussian => FlatPrior::Gaussian { variance: a.prior_variance.unwrap_or(1.0) },
                other => {
                    return Err(Error::Config(format!("--method pvi takes --prior flat or gaussian, not {other:?}")))
                }
            };
        } else {
            c.prior = hyperprior(p, c.prior)?;
        }
    } else if let (Some(v), FitMethod::Pvi) = (a.prior_variance, c.method) {
        c.flat_prior = FlatPrior::Gaussian { variance: v };
    }
    if let Some(n) = a.sweeps {
        c.vi.sweeps = n;
    }
    if let Some(n) = a.chains {
        c.vi.chains = n;
    }
    if let Some(n) = a.iters {
        c.vi.iterations = n;
    }
    if let Some(n) = a.draws {
        c.vi.draws = n;
    }
    if let Some(lr) = a.lr {
        match &mut c.vi.optimizer {
            OptimizerConfig::Adam { learning_rate, .. } => *learning_rate = lr,
            OptimizerConfig::RobbinsMonro { .. } => {
                return Err(Error::Config("--lr applies to the Adam optimizer only".into()))
            }
        }
    }
    if a.exact {
        c.vi.expectations = ExpectationMode::Exact;
    }
    if let Some(l) = a.lambda {
        c.penalty.lambda = l;
    }
    if let Some(p) = a.penalty {
        c.penalty.kind = match p {
            PenaltyArg::L2 => RegularizerKind::L2,
            PenaltyArg::L1 => RegularizerKind::L1,
            PenaltyArg::GroupL1 => RegularizerKind::GroupL1,
        };
    }
    if let Some(k) = a.cv {
        let grid = a.grid.clone().or_else(|| c.cv.as_ref().map(|p| p.grid.clone())).unwrap_or_else(|| {
            if c.penalty.kind == RegularizerKind::GroupL1 || c.method == FitMethod::PlGroupL1 {
                CvPlan::potts_grid()
            } else {
                CvPlan::ising_grid()
            }
        });
        c.cv = Some(CvPlan::new(k, grid, 0));
    } else if let (Some(grid), Some(plan)) = (&a.grid, c.cv.as_mut()) {
        plan.grid = grid.clone();
    } else if a.grid.is_some() {
        return Err(Error::Config("--grid needs --cv".into()));
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if plot {
        c.emit_plot_data = true;
    }
    if c.input.samples.is_none() && c.input.alignment.is_none() {
        return Err(Error::Config("fit needs --data or --alignment".into()));
    }
    c.vi.seed = c.seed;
    if let Some(plan) = c.cv.as_mut() {
        plan.seed = c.seed;
    }
    c.vi.validate()?;
    c.prior.validate()?;
    c.penalty.validate()?;
    Ok(c)
}

pub fn eval_config(a: &EvalArgs, plot: bool) -> Result<EvalConfig> {
    let mut fits = Vec::new();
    for f in &a.fits {
        let (name, path) = f
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--fit expects name=path, got {f:?}")))?;
        let path = absolute(Path::new(path))?;
        let params = if path.is_dir() { path.join("params.json") } else { path };
        let summary = params.with_file_name("summary.json");
        let summary = summary.exists().then_some(summary);
        fits.push(NamedFit { name: name.into(), params, summary });
    }
    let opt = |p: &Option<PathBuf>| p.as_deref().map(absolute).transpose();
    Ok(EvalConfig {
        fits,
        truth: opt(&a.truth)?,
        contacts: opt(&a.contacts)?,
        contact_threshold: a.contact_threshold,
        test: opt(&a.test)?,
        top_k: a.top_k,
        emit_plot_data: plot,
    })
}
