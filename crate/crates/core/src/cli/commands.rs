//! Subcommand implementations and the reusable per-shape sweeps behind them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::corpus::{generate, Corpus, CorpusShape, CorpusSpec, GridSpec, Perturbation, INDEX_FILE};
use super::{CommonArgs, Command, ConvergenceArgs, ReportArgs, SimulateArgs, VerifyArgs};
use crate::error::{Error, Result};
use crate::flow::{evolution_residual, run, variational_residuals};
use crate::hypersurface::{AnyGraph, Graph, Representation, ShapeFile};
use crate::inequalities::{
    monotonicity_audit, verify_hyperbolic_minkowski, verify_power_weight, verify_spherical_minkowski,
    verify_volume_comparison, verify_weighted_quermass, write_audit_csv, write_gap_csv, AuditReport, GapReport,
    GapTolerances, WeightFunction,
};
use crate::spaceform::SpaceForm;

const SIMULATE_RESOLUTION: usize = 64;
const VERIFY_RESOLUTION: usize = 512;
const CORPUS_RESOLUTION: usize = 512;
const CONVERGENCE_RESOLUTIONS: [usize; 4] = [32, 64, 128, 256];
/// finite-difference step of the rate checks
const RATE_DELTA: f64 = 1e-4;
/// identity residuals must shrink at least this much per doubling
const ORDER_RATIO: f64 = 3.5;
/// largest accepted rate residual at the finest grid
const RATE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityFamily {
    All,
    Quermass,
    Power,
    HyperbolicMinkowski,
    SphericalMinkowski,
    VolumeComparison,
}

impl InequalityFamily {
    const FAMILIES: [InequalityFamily; 5] = [
        InequalityFamily::Quermass,
        InequalityFamily::Power,
        InequalityFamily::HyperbolicMinkowski,
        InequalityFamily::SphericalMinkowski,
        InequalityFamily::VolumeComparison,
    ];

    /// Whether the family is stated in `form` (`ℝⁿ` counts as a sanity form
    /// for the quermassintegral families).
    pub fn stated_in(self, form: SpaceForm) -> bool {
        use InequalityFamily::*;
        match self {
            All => true,
            Quermass | Power | VolumeComparison => form != SpaceForm::Spherical,
            HyperbolicMinkowski => form == SpaceForm::Hyperbolic,
            SphericalMinkowski => form == SpaceForm::Spherical,
        }
    }

    /// The families a sweep covers; the quermassintegral families need `k ≥ 2`.
    fn members(self, form: SpaceForm, k: usize) -> Vec<InequalityFamily> {
        use InequalityFamily::*;
        match self {
            All => Self::FAMILIES
                .into_iter()
                .filter(|f| f.stated_in(form) && (k >= 2 || !matches!(f, Quermass | Power)))
                .collect(),
            single => vec![single],
        }
    }

    fn id(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    All,
    Minkowski,
    Hessian,
    Gradient,
    Divergence,
    Evolution,
    Variational,
}

impl Check {
    const CHECKS: [Check; 6] =
        [Check::Minkowski, Check::Hessian, Check::Gradient, Check::Divergence, Check::Evolution, Check::Variational];

    fn members(self) -> Vec<Check> {
        match self {
            Check::All => Self::CHECKS.to_vec(),
            single => vec![single],
        }
    }

    /// Identity checks converge at the scheme order; rate checks are judged
    /// by their size at the finest grid.
    pub fn is_identity(self) -> bool {
        matches!(self, Check::Minkowski | Check::Hessian | Check::Gradient | Check::Divergence)
    }

    fn id(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

/// A combination that could not be evaluated. `skipped` marks hypothesis
/// mismatches during an `all` sweep, which are not failures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub shape: String,
    pub task: String,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub weight: Option<String>,
    pub error: String,
    pub message: String,
    pub skipped: bool,
}

impl ErrorRecord {
    fn new(shape: &str, task: String, e: &Error) -> Self {
        Self {
            shape: shape.to_string(),
            task,
            k: None,
            l: None,
            weight: None,
            error: e.kind().to_string(),
            message: e.to_string(),
            skipped: false,
        }
    }
}

/// Which inequalities to evaluate on each shape.
#[derive(Clone, Debug)]
pub struct VerifyPlan {
    pub family: InequalityFamily,
    pub k: usize,
    pub ls: Vec<usize>,
    pub weights: Vec<WeightFunction>,
    pub tolerances: GapTolerances,
}

/// Evaluate every combination of `plan` on one shape.
pub fn verify_shape(g: &AnyGraph, label: &str, plan: &VerifyPlan) -> (Vec<GapReport>, Vec<ErrorRecord>) {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    let sweep = plan.family == InequalityFamily::All;
    let tol = &plan.tolerances;
    let k = plan.k;
    let mut record = |family: InequalityFamily, l: Option<usize>, weight: Option<&str>, kk: usize, out: Result<Vec<GapReport>>| match out {
        Ok(rs) => reports.extend(rs.into_iter().map(|r| r.with_shape(label))),
        Err(e) => {
            let mut rec = ErrorRecord::new(label, family.id(), &e);
            rec.k = Some(kk);
            rec.l = l;
            rec.weight = weight.map(String::from);
            rec.skipped = sweep && matches!(e, Error::Hypothesis(_));
            errors.push(rec);
        }
    };
    for family in plan.family.members(g.form(), k) {
        match family {
            InequalityFamily::Quermass => {
                for f in &plan.weights {
                    for (i, &l) in plan.ls.iter().enumerate() {
                        // the volume-based report does not depend on l
                        let out = verify_weighted_quermass(g, k, l, f, tol)
                            .map(|[a, b]| if i == 0 { vec![a, b] } else { vec![a] });
                        record(family, Some(l), Some(f.id()), k, out);
                    }
                }
            }
            InequalityFamily::Power => {
                for alpha in power_exponents(k, &plan.weights) {
                    let id = WeightFunction::power(alpha).id().to_string();
                    for (i, &l) in plan.ls.iter().enumerate() {
                        let out = verify_power_weight(g, k, l, alpha, tol)
                            .map(|[a, b]| if i == 0 { vec![a, b] } else { vec![a] });
                        record(family, Some(l), Some(&id), k, out);
                    }
                }
            }
            InequalityFamily::HyperbolicMinkowski => {
                for f in &plan.weights {
                    record(family, None, Some(f.id()), 1, verify_hyperbolic_minkowski(g, f, tol).map(Vec::from));
                }
            }
            InequalityFamily::SphericalMinkowski => {
                for f in &plan.weights {
                    record(family, None, Some(f.id()), 1, verify_spherical_minkowski(g, f, tol).map(|r| vec![r]));
                }
            }
            InequalityFamily::VolumeComparison => {
                record(family, Some(0), None, 0, verify_volume_comparison(g, tol).map(|r| vec![r]));
            }
            InequalityFamily::All => unreachable!("members() expands the sweep"),
        }
    }
    (reports, errors)
}

/// Exponents of the pure-power weights plus the threshold `k/(k−1)`.
fn power_exponents(k: usize, weights: &[WeightFunction]) -> Vec<f64> {
    let mut alphas: Vec<f64> = weights.iter().filter_map(WeightFunction::power_exponent).collect();
    if k >= 2 {
        alphas.push(k as f64 / (k as f64 - 1.0));
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub shape: String,
    pub check: Check,
    #[serde(rename = "N")]
    pub resolution: usize,
    pub residual: f64,
    /// residual at the previous resolution divided by this one
    pub ratio: Option<f64>,
}

/// Residual of one check on one discretized shape.
fn check_residual(g: &AnyGraph, check: Check, k: usize, weights: &[WeightFunction]) -> Result<f64> {
    let orders = 1..g.dim();
    let max = |xs: Vec<f64>| xs.into_iter().fold(0.0, f64::max);
    Ok(match check {
        Check::Minkowski => {
            let geo = g.geometry()?;
            max(orders.map(|j| geo.minkowski_residual(j)).collect::<Result<_>>()?)
        }
        Check::Divergence => {
            let geo = g.geometry()?;
            max(orders.map(|j| geo.divergence_identity_residual(j)).collect::<Result<_>>()?)
        }
        Check::Hessian | Check::Gradient => {
            let AnyGraph::Profile(p) = g else {
                return Err(Error::Config(format!("the {} check needs the profile representation", check.id())));
            };
            let r = p.identity_residuals(k)?;
            if check == Check::Hessian {
                r.hessian
            } else {
                r.gradient
            }
        }
        Check::Evolution => {
            max(weights.iter().map(|f| Ok(evolution_residual(g, k, f, RATE_DELTA)?.relative)).collect::<Result<_>>()?)
        }
        Check::Variational => max(variational_residuals(g, k, RATE_DELTA)?.into_iter().map(|r| r.relative).collect()),
        Check::All => unreachable!("members() expands the sweep"),
    })
}

/// What a convergence study evaluates.
#[derive(Clone, Debug)]
pub struct ConvergencePlan {
    pub checks: Vec<Check>,
    pub resolutions: Vec<usize>,
    pub k: usize,
    pub weights: Vec<WeightFunction>,
}

/// Residuals of every check on `perturbation` at each resolution, with
/// successive ratios.
pub fn convergence_rows(
    form: SpaceForm,
    n: usize,
    representation: Representation,
    label: &str,
    perturbation: &Perturbation,
    plan: &ConvergencePlan,
) -> (Vec<ConvergenceRow>, Vec<ErrorRecord>) {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &check in &plan.checks {
        let mut previous: Option<f64> = None;
        for &res in &plan.resolutions {
            let grid = match representation {
                Representation::Profile => GridSpec::profile(res),
                Representation::Sphere => GridSpec::sphere(res, 2 * res),
            };
            let residual = perturbation
                .graph(form, n, &grid)
                .and_then(|g| check_residual(&g, check, plan.k, &plan.weights));
            match residual {
                Ok(r) => {
                    rows.push(ConvergenceRow {
                        shape: label.to_string(),
                        check,
                        resolution: res,
                        residual: r,
                        ratio: previous.map(|p| p / r),
                    });
                    previous = Some(r);
                }
                Err(e) => {
                    let mut rec = ErrorRecord::new(label, check.id(), &e);
                    rec.k = Some(plan.k);
                    errors.push(rec);
                    break;
                }
            }
        }
    }
    (rows, errors)
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub check: String,
    pub artifact: String,
    pub metric: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub passed: bool,
}

pub(super) fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Corpus(args) => cmd_corpus(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Convergence(args) => cmd_convergence(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Where the shapes come from: a freshly generated spec or a corpus on disk.
enum CorpusSource {
    Spec,
    Directory(PathBuf),
}

/// Defaults, then the TOML file, then flags.
fn resolve(args: &CommonArgs, single_resolution: bool) -> Result<(ExperimentConfig, CorpusSource)> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(eps) = args.eps {
        cfg.epsilon = eps;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if single_resolution {
        match args.resolution.as_slice() {
            [] => {}
            [res] => cfg.resolution = Some(*res),
            _ => return Err(Error::Config("--N takes a single value for this command".into())),
        }
    }
    if let Some(n_phi) = args.n_phi {
        cfg.n_phi = n_phi;
    }
    if let Some(rep) = args.representation {
        cfg.representation = rep.into();
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(l) = args.l {
        cfg.l = Some(l);
    }
    if !args.weight.is_empty() {
        cfg.weights = args.weight.clone();
    }
    let mut source = CorpusSource::Spec;
    if let Some(text) = &args.corpus {
        let dir = Path::new(text);
        if dir.join(INDEX_FILE).is_file() {
            source = CorpusSource::Directory(dir.to_path_buf());
        } else {
            cfg.corpus = CorpusSpec::parse(text)?;
        }
    }
    if let Some(seed) = args.seed {
        cfg.corpus.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    for text in &args.tol {
        cfg.tolerances.apply_overrides(text)?;
    }
    cfg.validate()?;
    Ok((cfg, source))
}

/// The corpus, with graphs at the configured grid (or the stored grid when
/// read from disk and no resolution was requested).
fn load_corpus(cfg: &ExperimentConfig, source: &CorpusSource, default_resolution: usize) -> Result<Corpus> {
    match source {
        CorpusSource::Spec => generate(cfg.form()?, cfg.n, cfg.grid(default_resolution), &cfg.corpus),
        CorpusSource::Directory(dir) => {
            let mut corpus = Corpus::read(dir)?;
            if corpus.epsilon != cfg.epsilon || corpus.n != cfg.n {
                return Err(Error::Config(format!(
                    "corpus in {} is for epsilon = {}, n = {}, but the configuration asks for epsilon = {}, n = {}",
                    dir.display(),
                    corpus.epsilon,
                    corpus.n,
                    cfg.epsilon,
                    cfg.n
                )));
            }
            if cfg.resolution.is_some() {
                corpus.grid = cfg.grid(default_resolution);
            }
            Ok(corpus)
        }
    }
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.output.clone();
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(out)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_corpus(args: &CommonArgs) -> Result<i32> {
    let (cfg, source) = resolve(args, true)?;
    if let CorpusSource::Directory(dir) = source {
        return Err(Error::Config(format!("{} already holds a corpus; pass a spec instead", dir.display())));
    }
    let out = prepare_output(&cfg)?;
    let mut corpus = load_corpus(&cfg, &CorpusSource::Spec, CORPUS_RESOLUTION)?;
    corpus.write(&out.join("corpus"))?;
    println!(
        "corpus: {} shapes, acceptance {:.3} ({} attempts) -> {}",
        corpus.shapes.len(),
        corpus.acceptance_rate,
        corpus.attempts,
        out.join("corpus").display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    label: &'a str,
    config: &'a ExperimentConfig,
    run: crate::flow::RunManifest<'a>,
    audit: &'a AuditReport,
}

#[derive(Serialize)]
struct SimulateRow<'a> {
    run: &'a str,
    converged: bool,
    t: String,
    r_inf: String,
    steps: usize,
    rejected_steps: usize,
    violations: usize,
    audit_passed: bool,
    reason: &'a str,
}

fn simulate_shapes(cfg: &ExperimentConfig, source: &CorpusSource, shape: &str) -> Result<Vec<(String, AnyGraph)>> {
    if shape == "corpus" {
        let corpus = load_corpus(cfg, source, SIMULATE_RESOLUTION)?;
        return corpus.shapes.iter().map(|s| Ok((s.label.clone(), corpus.graph(s)?))).collect();
    }
    if let Some(r) = shape.strip_prefix("sphere:") {
        let r: f64 = r.parse().map_err(|_| Error::Config(format!("bad sphere radius in {shape:?}")))?;
        let g = Perturbation::sphere(r).graph(cfg.form()?, cfg.n, &cfg.grid(SIMULATE_RESOLUTION))?;
        return Ok(vec![("sphere".into(), g)]);
    }
    let path = Path::new(shape);
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("shape").to_string();
    Ok(vec![(label, ShapeFile::read(path)?.into_graph()?)])
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let (cfg, source) = resolve(&args.common, true)?;
    let flow = cfg.flow_config()?;
    let shapes = simulate_shapes(&cfg, &source, &args.shape)?;
    let out = prepare_output(&cfg)?;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let results: Vec<Result<(crate::flow::FlowRun, AuditReport)>> = shapes
        .par_iter()
        .map(|(label, g)| {
            let r = run(g, &flow)?;
            let audit = monotonicity_audit(&r);
            r.write_csv(create(&runs_dir.join(format!("{label}.csv")))?)?;
            let record = RunRecord { label, config: &cfg, run: r.manifest(), audit: &audit };
            write_json(&runs_dir.join(format!("{label}.json")), &record)?;
            Ok((r, audit))
        })
        .collect();
    let mut errors = Vec::new();
    let mut audits = Vec::new();
    let mut table = csv::Writer::from_writer(create(&out.join("simulate.csv"))?);
    let mut failed = 0;
    for ((label, _), result) in shapes.iter().zip(&results) {
        match result {
            Ok((r, audit)) => {
                table.serialize(SimulateRow {
                    run: label,
                    converged: r.terminal.converged,
                    t: format!("{:.16e}", r.terminal.t),
                    r_inf: format!("{:.16e}", r.terminal.r_inf),
                    steps: r.terminal.steps,
                    rejected_steps: r.terminal.rejected_steps,
                    violations: r.violations.len(),
                    audit_passed: audit.passed,
                    reason: &r.terminal.reason,
                })?;
                if !(audit.passed && r.terminal.converged) {
                    failed += 1;
                }
                audits.push((label.as_str(), audit));
            }
            Err(e) => {
                let mut rec = ErrorRecord::new(label, "simulate".into(), e);
                rec.k = Some(cfg.k);
                errors.push(rec);
            }
        }
    }
    table.flush()?;
    write_audit_csv(&audits, create(&out.join("audit.csv"))?)?;
    write_json(&out.join("simulate_errors.json"), &errors)?;
    println!("simulate: {} runs, {} failed audits or did not converge, {} errors", shapes.len(), failed, errors.len());
    emit_errors(&errors);
    Ok(if failed == 0 && errors.is_empty() { 0 } else { 1 })
}

#[derive(Serialize)]
struct GapDocument<'a> {
    config: &'a ExperimentConfig,
    family: InequalityFamily,
    reports: &'a [GapReport],
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let (cfg, source) = resolve(&args.common, true)?;
    let form = cfg.form()?;
    if !args.thm.stated_in(form) {
        return Err(Error::Hypothesis(format!("{} is not stated in {form}", args.thm.id())));
    }
    let plan = VerifyPlan {
        family: args.thm,
        k: cfg.k,
        ls: cfg.l.map_or_else(|| (0..=cfg.k).collect(), |l| vec![l]),
        weights: cfg.weight_functions()?,
        tolerances: cfg.tolerances.gap_tolerances(),
    };
    let corpus = load_corpus(&cfg, &source, VERIFY_RESOLUTION)?;
    let out = prepare_output(&cfg)?;
    let per_shape: Vec<(Vec<GapReport>, Vec<ErrorRecord>)> = corpus
        .shapes
        .par_iter()
        .map(|s: &CorpusShape| match corpus.graph(s) {
            Ok(g) => verify_shape(&g, &s.label, &plan),
            Err(e) => (Vec::new(), vec![ErrorRecord::new(&s.label, "graph".into(), &e)]),
        })
        .collect();
    let (reports, errors): (Vec<_>, Vec<_>) = per_shape.into_iter().unzip();
    let reports: Vec<GapReport> = reports.into_iter().flatten().collect();
    let errors: Vec<ErrorRecord> = errors.into_iter().flatten().collect();
    write_gap_csv(&reports, create(&out.join("gaps.csv"))?)?;
    write_json(&out.join("gaps.json"), &GapDocument { config: &cfg, family: args.thm, reports: &reports })?;
    write_json(&out.join("verify_errors.json"), &errors)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    let fatal: Vec<ErrorRecord> = errors.iter().filter(|e| !e.skipped).cloned().collect();
    println!(
        "verify: {} reports over {} shapes, {} failed, {} skipped, {} errors",
        reports.len(),
        corpus.shapes.len(),
        failed,
        errors.len() - fatal.len(),
        fatal.len()
    );
    emit_errors(&fatal);
    Ok(if failed == 0 && fatal.is_empty() { 0 } else { 1 })
}

fn cmd_convergence(args: &ConvergenceArgs) -> Result<i32> {
    let (cfg, source) = resolve(&args.common, false)?;
    let mut resolutions = if args.common.resolution.is_empty() {
        CONVERGENCE_RESOLUTIONS.to_vec()
    } else {
        args.common.resolution.clone()
    };
    resolutions.sort_unstable();
    resolutions.dedup();
    let finest = *resolutions.last().expect("resolution list is non-empty");
    let corpus = load_corpus(&cfg, &source, finest)?;
    let out = prepare_output(&cfg)?;
    let plan = ConvergencePlan { checks: args.check.members(), resolutions, k: cfg.k, weights: cfg.weight_functions()? };
    let form = corpus.form();
    let chosen = &corpus.shapes[..args.shapes.min(corpus.shapes.len())];
    let per_shape: Vec<_> = chosen
        .par_iter()
        .map(|s| convergence_rows(form, corpus.n, corpus.grid.representation, &s.label, &s.perturbation, &plan))
        .collect();
    let (rows, errors): (Vec<_>, Vec<_>) = per_shape.into_iter().unzip();
    let rows: Vec<ConvergenceRow> = rows.into_iter().flatten().collect();
    let errors: Vec<ErrorRecord> = errors.into_iter().flatten().collect();
    let mut w = csv::Writer::from_writer(create(&out.join("convergence.csv"))?);
    w.write_record(["shape", "check", "N", "residual", "ratio"])?;
    for r in &rows {
        w.write_record([
            r.shape.clone(),
            r.check.id(),
            r.resolution.to_string(),
            format!("{:.16e}", r.residual),
            r.ratio.map(|x| format!("{x:.16e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_json(&out.join("convergence_errors.json"), &errors)?;
    println!("convergence: {} rows over {} shapes, {} errors", rows.len(), chosen.len(), errors.len());
    emit_errors(&errors);
    Ok(if errors.is_empty() { 0 } else { 1 })
}

#[derive(Deserialize)]
struct SimulateCsv {
    converged: bool,
    audit_passed: bool,
}

#[derive(Deserialize)]
struct GapCsv {
    relative_gap: f64,
    equality_case: bool,
    passed: bool,
}

#[derive(Deserialize)]
struct ConvergenceCsv {
    shape: String,
    check: Check,
    #[serde(rename = "N")]
    resolution: usize,
    residual: f64,
    ratio: Option<f64>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<Vec<T>>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(Some(r.deserialize().collect::<std::result::Result<_, _>>()?))
}

fn summarize(out: &Path) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut push = |check: &str, artifact: &str, metric: &str, value: f64, threshold: Option<f64>, passed: bool| {
        rows.push(SummaryRow {
            check: check.into(),
            artifact: artifact.into(),
            metric: metric.into(),
            value,
            threshold,
            passed,
        })
    };
    if let Some(sim) = read_rows::<SimulateCsv>(&out.join("simulate.csv"))? {
        let audit_failures = sim.iter().filter(|r| !r.audit_passed).count();
        let unconverged = sim.iter().filter(|r| !r.converged).count();
        push("monotonicity", "simulate.csv", "runs", sim.len() as f64, None, true);
        push("monotonicity", "simulate.csv", "failed_audits", audit_failures as f64, Some(0.0), audit_failures == 0);
        push("monotonicity", "simulate.csv", "unconverged_runs", unconverged as f64, Some(0.0), unconverged == 0);
    }
    if let Some(gaps) = read_rows::<GapCsv>(&out.join("gaps.csv"))? {
        let failed = gaps.iter().filter(|r| !r.passed).count();
        let min_gap = gaps.iter().filter(|r| !r.equality_case).map(|r| r.relative_gap).fold(f64::INFINITY, f64::min);
        let equality = gaps.iter().filter(|r| r.equality_case).map(|r| r.relative_gap.abs()).fold(0.0, f64::max);
        push("inequality gaps", "gaps.csv", "reports", gaps.len() as f64, None, true);
        push("inequality gaps", "gaps.csv", "failed_reports", failed as f64, Some(0.0), failed == 0);
        if min_gap.is_finite() {
            push("inequality gaps", "gaps.csv", "min_relative_gap", min_gap, None, true);
        }
        push("inequality gaps", "gaps.csv", "max_equality_defect", equality, None, true);
    }
    if let Some(conv) = read_rows::<ConvergenceCsv>(&out.join("convergence.csv"))? {
        for check in Check::CHECKS {
            let of_check: Vec<&ConvergenceCsv> = conv.iter().filter(|r| r.check == check).collect();
            let Some(finest) = of_check.iter().map(|r| r.resolution).max() else { continue };
            let at_finest = of_check.iter().filter(|r| r.resolution == finest);
            let name = format!("convergence {}", check.id());
            if check.is_identity() {
                let ratio = at_finest.filter_map(|r| r.ratio).fold(f64::INFINITY, f64::min);
                if ratio.is_finite() {
                    push(&name, "convergence.csv", "min_finest_ratio", ratio, Some(ORDER_RATIO), ratio >= ORDER_RATIO);
                }
            } else {
                let worst = at_finest.map(|r| r.residual).fold(0.0, f64::max);
                push(&name, "convergence.csv", "max_finest_residual", worst, Some(RATE_TOLERANCE), worst <= RATE_TOLERANCE);
            }
            let shapes = of_check.iter().map(|r| r.shape.as_str()).collect::<std::collections::BTreeSet<_>>().len();
            push(&name, "convergence.csv", "shapes", shapes as f64, None, true);
        }
    }
    for name in ["simulate_errors.json", "verify_errors.json", "convergence_errors.json"] {
        let path = out.join(name);
        if path.is_file() {
            let errors: Vec<ErrorRecord> = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let fatal = errors.iter().filter(|e| !e.skipped).count();
            push("errors", name, "errors", fatal as f64, Some(0.0), fatal == 0);
            push("errors", name, "skipped", (errors.len() - fatal) as f64, None, true);
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Summary<'a> {
    passed: bool,
    rows: &'a [SummaryRow],
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let rows = summarize(&args.out)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("no artifacts found in {}", args.out.display())));
    }
    let passed = rows.iter().all(|r| r.passed);
    write_json(&args.out.join("summary.json"), &Summary { passed, rows: &rows })?;
    let mut w = csv::Writer::from_writer(create(&args.out.join("summary.csv"))?);
    w.write_record(["check", "artifact", "metric", "value", "threshold", "passed"])?;
    for r in &rows {
        w.write_record([
            r.check.clone(),
            r.artifact.clone(),
            r.metric.clone(),
            format!("{:.16e}", r.value),
            r.threshold.map(|x| format!("{x:.16e}")).unwrap_or_default(),
            r.passed.to_string(),
        ])?;
        println!("{:<28} {:<24} {:>24.6e}  {}", r.check, r.metric, r.value, if r.passed { "pass" } else { "FAIL" });
    }
    w.flush()?;
    Ok(if passed { 0 } else { 1 })
}

/// One JSON record per line on stderr.
fn emit_errors(errors: &[ErrorRecord]) {
    for e in errors {
        if let Ok(line) = serde_json::to_string(e) {
            eprintln!("{line}");
        }
    }
}
