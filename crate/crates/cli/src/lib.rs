//! Driver behind the `rbdgen` binary: validation against the reference
//! dynamics, batch benchmarks, report series and kernel/schedule dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rbdgen::batch::{self, CsvError, LatencyRow, Mode, SweepConfig};
use rbdgen::kernel::{self, emit_source, Dialect, GenError, GenOptions, InterpError, KernelProgram, Named};
use rbdgen::models;
use rbdgen::refdyn;
use rbdgen::schedule::{self, Algorithm, ScheduleError, DEFAULT_BUDGET};
use rbdgen::spatial::SpatialVec;
use rbdgen::urdf::{self, ParseOptions, RobotModel, UrdfError};
use serde::Serialize;
use thiserror::Error;

/// Per-entry tolerance of kernel vs reference: `|a − b| ≤ ORACLE_TOL · max(1, |b|)`.
pub const ORACLE_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-6;
pub const FD_ABS: f64 = 1e-7;
pub const FD_REL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Urdf(#[from] UrdfError),
    #[error("kernel generation: {0}")]
    Gen(#[from] GenError),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("interpreter: {0}")]
    Interp(#[from] InterpError),
    #[error("batch: {0}")]
    Batch(#[from] batch::BatchError),
    #[error("{path}: {source}")]
    Csv { path: String, source: CsvError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// Resolve `builtin:<name>` or a URDF path. `None` yields every bundled model.
pub fn resolve_models(urdf: Option<&str>) -> Result<Vec<RobotModel>, CliError> {
    match urdf {
        None => Ok(models::bundled().into_iter().map(|(_, m)| m).collect()),
        Some(spec) => resolve_model(spec).map(|m| vec![m]),
    }
}

pub fn resolve_model(spec: &str) -> Result<RobotModel, CliError> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return models::by_name(name).ok_or_else(|| {
            CliError::Usage(format!("unknown builtin model `{name}` (have {})", models::BUNDLED.join(", ")))
        });
    }
    Ok(urdf::load_urdf(spec, &ParseOptions::default())?)
}

fn gen_options(budget: usize) -> GenOptions {
    GenOptions { budget, ..GenOptions::default() }
}

// ---------------------------------------------------------------- validate

#[derive(Clone, Debug)]
pub struct ValidateConfig {
    pub models: Vec<RobotModel>,
    pub algorithms: Vec<Algorithm>,
    /// Random states compared against the reference.
    pub states: usize,
    /// Leading states that also get a finite-difference gradient check.
    pub fd_states: usize,
    pub seed: u64,
    pub budget: usize,
}

impl ValidateConfig {
    pub fn new(models: Vec<RobotModel>) -> Self {
        ValidateConfig { models, algorithms: Algorithm::ALL.to_vec(), states: 100, fd_states: 3, seed: 0, budget: DEFAULT_BUDGET }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AlgorithmCheck {
    pub model: String,
    pub algorithm: String,
    pub states: usize,
    pub max_abs: f64,
    /// Over entries with `|reference| ≥ 1e-6`.
    pub max_rel: f64,
    pub oracle_passed: bool,
    /// Largest kernel vs central-difference deviation, gradients only.
    pub fd_max_abs: Option<f64>,
    /// Worst `|a − b| / (abs + rel |b|)`; ≤ 1 passes.
    pub fd_ratio: Option<f64>,
    /// Cross-limb gradient entries inspected and the largest magnitude
    /// found there. Only for gradients on models with several root limbs.
    pub cross_limb_entries: Option<usize>,
    pub cross_limb_max: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidateReport {
    pub seed: u64,
    pub checks: Vec<AlgorithmCheck>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per (model, algorithm).
    pub fn table(&self) -> String {
        let mut out = String::from("model        algorithm  states  max_abs     max_rel     fd_dev      cross_limb  result\n");
        for c in &self.checks {
            let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3e}"));
            out.push_str(&format!(
                "{:<12} {:<10} {:>6}  {:<11} {:<11} {:<11} {:<11} {}\n",
                c.model,
                c.algorithm,
                c.states,
                format!("{:.3e}", c.max_abs),
                format!("{:.3e}", c.max_rel),
                opt(c.fd_max_abs),
                opt(c.cross_limb_max),
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }

    /// Which checks ran on which model and algorithm.
    pub fn manifest(&self) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "model": c.model,
                    "algorithm": c.algorithm,
                    "oracle_states": c.states,
                    "finite_difference": c.fd_ratio.is_some(),
                    "branch_independence": c.cross_limb_entries.is_some(),
                    "passed": c.passed,
                })
            })
            .collect();
        serde_json::json!({ "seed": self.seed, "passed": self.passed(), "entries": entries })
    }
}

/// A random state with a small external force on every link.
pub struct State {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub u: Vec<f64>,
    pub fext: Vec<SpatialVec>,
}

pub fn random_state(n: usize, seed: u64) -> State {
    let (q, qd, u) = models::random_state(n, seed);
    let (a, b, _) = models::random_state(n, seed ^ 0x0f0f_f0f0);
    let fext = (0..n).map(|i| SpatialVec(std::array::from_fn(|k| if k < 3 { 0.2 * a[i] } else { 0.5 * b[i] }))).collect();
    State { q, qd, u, fext }
}

pub fn kernel_inputs(alg: Algorithm, s: &State) -> Named {
    let mut m = Named::new();
    m.insert("q".into(), s.q.clone());
    if alg == Algorithm::Minv {
        return m;
    }
    m.insert("qd".into(), s.qd.clone());
    let u = if matches!(alg, Algorithm::Id | Algorithm::GradId) { "qdd" } else { "tau" };
    m.insert(u.into(), s.u.clone());
    m.insert("fext".into(), s.fext.iter().flat_map(|f| f.0).collect());
    m
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|k| m[(k / c, k % c)]).collect()
}

/// Reference outputs under the kernel's output names; matrices row-major.
pub fn reference_outputs(model: &RobotModel, alg: Algorithm, s: &State) -> Named {
    let f = Some(s.fext.as_slice());
    let mut out = Named::new();
    match alg {
        Algorithm::Id => {
            out.insert("tau".into(), refdyn::rnea(model, &s.q, &s.qd, &s.u, f));
        }
        Algorithm::Minv => {
            out.insert("minv".into(), row_major(&refdyn::minv_direct(model, &s.q)));
        }
        Algorithm::Fd => {
            out.insert("qdd".into(), refdyn::forward_dynamics(model, &s.q, &s.qd, &s.u, f));
        }
        Algorithm::GradId => {
            let g = refdyn::rnea_grad(model, &s.q, &s.qd, &s.u, f);
            out.insert("dtau_dq".into(), row_major(&g.dq));
            out.insert("dtau_dqd".into(), row_major(&g.dqd));
        }
        Algorithm::GradFd => {
            out.insert("qdd".into(), refdyn::forward_dynamics(model, &s.q, &s.qd, &s.u, f));
            let g = refdyn::fd_grad(model, &s.q, &s.qd, &s.u, f);
            out.insert("dqdd_dq".into(), row_major(&g.dq));
            out.insert("dqdd_dqd".into(), row_major(&g.dqd));
        }
    }
    out
}

/// The state a gradient is checked against central differences at. For
/// ∇FD the random `u` is read as an acceleration and mapped to torques,
/// since uniform random torques on light distal links give accelerations
/// large enough that the step-1e-6 difference loses ~1e-7 to cancellation.
fn fd_state(model: &RobotModel, alg: Algorithm, s: &State) -> State {
    let u = match alg {
        Algorithm::GradFd => refdyn::rnea(model, &s.q, &s.qd, &s.u, Some(&s.fext)),
        _ => s.u.clone(),
    };
    State { q: s.q.clone(), qd: s.qd.clone(), u, fext: s.fext.clone() }
}

/// Central-difference Jacobians of the reference for a gradient kernel,
/// keyed by the kernel's output names.
fn finite_difference(model: &RobotModel, alg: Algorithm, s: &State) -> Named {
    let f = Some(s.fext.as_slice());
    let value = |q: &[f64], qd: &[f64]| match alg {
        Algorithm::GradId => refdyn::rnea(model, q, qd, &s.u, f),
        _ => refdyn::forward_dynamics(model, q, qd, &s.u, f),
    };
    let dq = refdyn::finite_diff_oracle(|x| value(x, &s.qd), &s.q, FD_STEP);
    let dqd = refdyn::finite_diff_oracle(|x| value(&s.q, x), &s.qd, FD_STEP);
    let (a, b) = if alg == Algorithm::GradId { ("dtau_dq", "dtau_dqd") } else { ("dqdd_dq", "dqdd_dqd") };
    let mut out = Named::new();
    out.insert(a.into(), row_major(&dq));
    out.insert(b.into(), row_major(&dqd));
    out
}

/// Roots of the limbs hanging directly off the base.
fn root_limbs(model: &RobotModel) -> usize {
    model.parent.iter().filter(|p| p.is_none()).count()
}

/// Compare every generated kernel with the reference over `states` random
/// states, check gradients against central differences on the first
/// `fd_states`, and check that cross-limb gradient blocks are exactly zero.
pub fn cmd_validate(cfg: &ValidateConfig) -> Result<ValidateReport, CliError> {
    let mut checks = Vec::new();
    for model in &cfg.models {
        let n = model.n_frames();
        let tree = model.tree();
        for &alg in &cfg.algorithms {
            let program = kernel::generate(model, alg, &gen_options(cfg.budget))?;
            let mut eval = kernel::Evaluator::new(&program);
            let (mut max_abs, mut max_rel, mut oracle_passed) = (0.0f64, 0.0f64, true);
            let (mut fd_abs, mut fd_ratio) = (0.0f64, 0.0f64);
            let (mut cross_entries, mut cross_max) = (0usize, 0.0f64);
            let multi_limb = alg.is_gradient() && root_limbs(model) > 1;
            for k in 0..cfg.states {
                let s = random_state(n, cfg.seed.wrapping_add(k as u64));
                let got = eval.eval(&kernel_inputs(alg, &s))?;
                let want = reference_outputs(model, alg, &s);
                for (name, w) in &want {
                    for (a, b) in got[name].iter().zip(w) {
                        let d = (a - b).abs();
                        max_abs = max_abs.max(d);
                        if b.abs() >= 1e-6 {
                            max_rel = max_rel.max(d / b.abs());
                        }
                        oracle_passed &= d <= ORACLE_TOL * b.abs().max(1.0);
                    }
                }
                if alg.is_gradient() && k < cfg.fd_states {
                    // ∇FD is checked at τ = ID(q, q̇, q̈) so both gradients see
                    // accelerations of the same size; see `fd_state`
                    let s = fd_state(model, alg, &s);
                    let got = eval.eval(&kernel_inputs(alg, &s))?;
                    for (name, w) in finite_difference(model, alg, &s) {
                        for (a, b) in got[&name].iter().zip(&w) {
                            fd_abs = fd_abs.max((a - b).abs());
                            fd_ratio = fd_ratio.max((a - b).abs() / (FD_ABS + FD_REL * b.abs()));
                        }
                    }
                }
                if multi_limb {
                    for v in got.values() {
                        if v.len() != n * n {
                            continue;
                        }
                        for (idx, x) in v.iter().enumerate() {
                            if !tree.same_limb(idx / n, idx % n) {
                                cross_entries += 1;
                                cross_max = cross_max.max(x.abs());
                            }
                        }
                    }
                }
            }
            let fd_checked = alg.is_gradient() && cfg.fd_states > 0 && cfg.states > 0;
            let passed = oracle_passed && (!fd_checked || fd_ratio <= 1.0) && (!multi_limb || cross_max == 0.0);
            checks.push(AlgorithmCheck {
                model: model.name.clone(),
                algorithm: alg.name().to_string(),
                states: cfg.states,
                max_abs,
                max_rel,
                oracle_passed,
                fd_max_abs: fd_checked.then_some(fd_abs),
                fd_ratio: fd_checked.then_some(fd_ratio),
                cross_limb_entries: multi_limb.then_some(cross_entries),
                cross_limb_max: multi_limb.then_some(cross_max),
                passed,
            });
        }
    }
    Ok(ValidateReport { seed: cfg.seed, checks })
}

// ---------------------------------------------------------------- bench

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub model: RobotModel,
    pub algorithms: Vec<Algorithm>,
    pub ns: Vec<usize>,
    pub workers: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub budget: usize,
    pub io_sim: bool,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_NS: [usize; 5] = [16, 32, 64, 128, 256];

impl BenchConfig {
    pub fn new(model: RobotModel) -> Self {
        BenchConfig {
            model,
            algorithms: vec![Algorithm::GradFd],
            ns: DEFAULT_NS.to_vec(),
            workers: batch::physical_cores(),
            reps: 100,
            warmup: 2,
            seed: 0,
            budget: DEFAULT_BUDGET,
            io_sim: false,
            out: None,
        }
    }
}

/// Serial and parallel sweeps for every algorithm. Parallel rows carry
/// `speedup = serial mean / parallel mean` for the same `N`. Writes the CSV
/// to `out` when set.
pub fn cmd_bench(cfg: &BenchConfig) -> Result<Vec<LatencyRow>, CliError> {
    if cfg.ns.is_empty() || cfg.ns.contains(&0) {
        return Err(CliError::Usage("--N needs at least one positive batch size".into()));
    }
    if cfg.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if cfg.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    // fail on an unwritable path before spending time on the sweep
    let file = match &cfg.out {
        Some(p) => Some(fs::File::create(p).map_err(io_err(p))?),
        None => None,
    };
    let mut rows = Vec::new();
    for &alg in &cfg.algorithms {
        let program = kernel::generate(&cfg.model, alg, &gen_options(cfg.budget))?;
        let sweep = |mode: Mode, workers: usize| {
            let sc = SweepConfig {
                ns: cfg.ns.clone(),
                mode,
                workers,
                reps: cfg.reps,
                warmup: cfg.warmup,
                seed: cfg.seed,
                io_sim: cfg.io_sim,
            };
            batch::sweep(&program, &sc)
        };
        let serial = sweep(Mode::Serial, 1)?;
        let parallel = sweep(Mode::Parallel, cfg.workers)?;
        for (s, p) in serial.iter().zip(&parallel) {
            for (r, speedup) in [(s, None), (p, Some(s.mean_us / p.mean_us))] {
                rows.push(LatencyRow {
                    algorithm: alg.name().to_string(),
                    model: cfg.model.name.clone(),
                    n: r.n,
                    mode: r.mode,
                    workers: r.workers,
                    mean_us: r.mean_us,
                    std_us: r.std_us,
                    reps: r.reps,
                    speedup,
                    io_us: r.io_us,
                });
            }
        }
    }
    if let (Some(file), Some(path)) = (file, &cfg.out) {
        batch::write_csv(&rows, file).map_err(|source| CliError::Csv { path: path.display().to_string(), source })?;
    }
    Ok(rows)
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub series: Vec<PathBuf>,
    pub scaling: PathBuf,
}

fn write_records(path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in records {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

fn series_file_name(alg: &str) -> String {
    let safe: String = alg.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    format!("series_{safe}.csv")
}

/// Turn a bench CSV into `series_<algorithm>.csv` files (latency and
/// speedup against N, one row per model, N and mode) and `scaling.csv`
/// (latency ratios between every ordered pair of models per algorithm,
/// mode and N).
pub fn cmd_report(csv_path: &Path, out_dir: &Path) -> Result<ReportFiles, CliError> {
    let text = fs::read_to_string(csv_path).map_err(io_err(csv_path))?;
    let rows = batch::read_csv(&text).map_err(|source| CliError::Csv { path: csv_path.display().to_string(), source })?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", csv_path.display())));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut by_alg: BTreeMap<&str, Vec<&LatencyRow>> = BTreeMap::new();
    for r in &rows {
        by_alg.entry(&r.algorithm).or_default().push(r);
    }
    let fmt = |x: f64| format!("{x:.3}");
    let mut series = Vec::new();
    for (alg, mut rs) in by_alg {
        rs.sort_by(|a, b| (&a.model, a.mode.name(), a.n).cmp(&(&b.model, b.mode.name(), b.n)));
        let records: Vec<Vec<String>> = rs
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.mode.name().to_string(),
                    r.n.to_string(),
                    r.workers.to_string(),
                    fmt(r.mean_us),
                    fmt(r.std_us),
                    r.speedup.map_or_else(String::new, |s| format!("{s:.4}")),
                ]
            })
            .collect();
        let path = out_dir.join(series_file_name(alg));
        write_records(&path, &["model", "mode", "N", "workers", "mean_us", "std_us", "speedup"], &records)?;
        series.push(path);
    }

    let mut latency: BTreeMap<(&str, &str, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &rows {
        latency.entry((&r.algorithm, r.mode.name(), r.n)).or_default().insert(&r.model, r.mean_us);
    }
    let mut records = Vec::new();
    for ((alg, mode, n), per_model) in &latency {
        for (a, la) in per_model {
            for (b, lb) in per_model {
                let ratio = if *lb > 0.0 { la / lb } else if la == lb { 1.0 } else { f64::INFINITY };
                records.push(vec![
                    alg.to_string(),
                    mode.to_string(),
                    n.to_string(),
                    a.to_string(),
                    b.to_string(),
                    fmt(*la),
                    fmt(*lb),
                    format!("{ratio:.4}"),
                ]);
            }
        }
    }
    let scaling = out_dir.join("scaling.csv");
    write_records(&scaling, &["algorithm", "mode", "N", "model_a", "model_b", "mean_us_a", "mean_us_b", "ratio"], &records)?;
    Ok(ReportFiles { series, scaling })
}

// ---------------------------------------------------------------- dumps

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFormat {
    Text,
    Source(Dialect),
}

impl std::str::FromStr for KernelFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "text" {
            return Ok(KernelFormat::Text);
        }
        s.parse::<Dialect>().map(KernelFormat::Source).map_err(|_| format!("unknown kernel format `{s}` (text, c, listing)"))
    }
}

pub fn generate_kernel(model: &RobotModel, alg: Algorithm, budget: usize) -> Result<KernelProgram, CliError> {
    Ok(kernel::generate(model, alg, &gen_options(budget))?)
}

pub fn cmd_dump_kernel(model: &RobotModel, alg: Algorithm, budget: usize, format: KernelFormat) -> Result<String, CliError> {
    let program = generate_kernel(model, alg, budget)?;
    Ok(match format {
        KernelFormat::Text => kernel::text::dump(&program),
        KernelFormat::Source(d) => emit_source(&program, d),
    })
}

pub fn cmd_dump_schedule(model: &RobotModel, alg: Algorithm, budget: usize, json: bool) -> Result<String, CliError> {
    let levels = schedule::build_levels(model);
    let columns = schedule::analyze_sparsity(model, alg);
    let layout = schedule::plan_workspace(model, alg, &columns, budget)?;
    Ok(if json { schedule::dump_json_lines(&levels, &layout) } else { schedule::dump_text(&levels, &layout) })
}

/// Write `text` to `out`, or stdout when unset.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
