//! The `asysvrg` command line.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{hogwild_run_observed, svrg_sequential_observed, HogwildConfig, SvrgConfig};
use crate::data::{self, dataset_stats, SyntheticSpec};
use crate::engine::{self, default_inner_iterations, IterateOption, Scheme, SolverConfig};
use crate::error::Error;
use crate::metrics::{self, RunMetrics, SpeedupRow};
use crate::model::{self, Dataset};
use crate::par::Exec;
use crate::reference;
use crate::sim::{self, Schedule, SimConfig, ValidationOptions};
use crate::theory::{self, ReadScheme};
use crate::trajectory::{Control, EpochOutcome, Trajectory};

pub const BUILD_ID: &str = env!("ASYSVRG_BUILD_ID");

/// Candidate steps, in units of `1/L`, tried by `--eta auto`.
pub const STEP_GRID: [f64; 4] = [1.0, 0.5, 0.1, 0.05];

const EXIT_INVALID: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "asysvrg",
    version,
    about = "Asynchronous parallel SVRG for L2-regularized logistic regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write per-epoch metrics.
    Run(RunArgs),
    /// Run several configurations under one effective-pass budget.
    Compare(CompareArgs),
    /// Time to tolerance for a list of worker counts.
    Speedup(SpeedupArgs),
    /// Print convergence certificates.
    Certify(CertifyArgs),
    /// Replay a schedule in the deterministic simulator.
    Simulate(SimulateArgs),
    /// Write a synthetic LibSVM dataset.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LibSVM file, optionally gzip-compressed.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Synthetic problem, e.g. "n=1000 d=20 seed=1 separation=4" or "fixture".
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Pin the feature dimension instead of inferring it.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
}

impl DataArgs {
    pub fn load(&self) -> anyhow::Result<(Dataset, String)> {
        if let Some(path) = &self.data {
            let data = data::load_libsvm(path, self.dim).with_context(|| format!("loading {}", path.display()))?;
            return Ok((data, path.display().to_string()));
        }
        let spec = match self.synthetic.as_deref() {
            None | Some("fixture") => data::FIXTURE,
            Some(s) => s.parse::<SyntheticSpec>()?,
        };
        Ok((spec.generate()?, format!("synthetic {spec}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    /// The asynchronous solver.
    Asysvrg,
    /// Single-threaded SVRG.
    Svrg,
    /// Hogwild! SGD with a per-epoch step decay.
    Hogwild,
}

/// `--eta`: a number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepChoice {
    Fixed(f64),
    Auto,
}

impl std::str::FromStr for StepChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StepChoice::Auto);
        }
        s.parse::<f64>()
            .map(StepChoice::Fixed)
            .map_err(|e| format!("expected a number or 'auto': {e}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::Asysvrg)]
    pub algorithm: Algorithm,
    /// consistent, inconsistent or lock-free.
    #[arg(long, default_value = "lock-free")]
    pub scheme: Scheme,
    #[arg(long, short = 'p', default_value_t = 1)]
    pub workers: usize,
    /// Step size, or `auto` to pick from {1, 0.5, 0.1, 0.05}/L.
    #[arg(long, default_value = "auto")]
    pub eta: StepChoice,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Inner iterations per worker; defaults to 2n/p (n/p for Hogwild!).
    #[arg(long)]
    pub inner: Option<usize>,
    /// Snapshot rule: 1 (last iterate) or 2 (average).
    #[arg(long, default_value = "1")]
    pub option: IterateOption,
    /// Hogwild! step decay per epoch.
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Stop once the gap is below this; `inf` disables early stopping.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write 0 for wall times so reruns are byte-identical.
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Effective passes per configuration.
    #[arg(long, default_value_t = 30.0)]
    pub budget: f64,
    /// `algorithm[:key=value,...]` with keys scheme, workers, eta, inner,
    /// option, decay, seed. Repeatable.
    #[arg(long = "config", required = true)]
    pub configs: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Args)]
pub struct SpeedupArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "lock-free")]
    pub scheme: Scheme,
    /// Comma-separated worker counts.
    #[arg(long, default_value = "1,2,4")]
    pub threads: String,
    #[arg(long, default_value = "auto")]
    pub eta: StepChoice,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Smoothness constant; derived from the data when omitted.
    #[arg(long = "smoothness", short = 'L')]
    pub smoothness: Option<f64>,
    /// Strong convexity; defaults to λ.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub tau: u32,
    /// Updates per epoch M̃; defaults to 2n (p·M with M = 2n/p).
    #[arg(long)]
    pub m_tilde: Option<f64>,
    #[arg(long, default_value = "consistent")]
    pub scheme: ReadScheme,
    /// Step to certify; omitted means search for the largest certified one.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Explicit r (default 1/η).
    #[arg(long)]
    pub r: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Alternating,
    RoundRobin,
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Schedule file; see the README for the format.
    #[arg(long, conflicts_with = "generate")]
    pub schedule: Option<PathBuf>,
    /// Generate a schedule instead of reading one.
    #[arg(long, value_enum)]
    pub generate: Option<ScheduleKind>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub tau: usize,
    /// Applies per epoch for generated schedules; defaults to 2n.
    #[arg(long)]
    pub updates: Option<usize>,
    /// Let generated schedules contain split reads.
    #[arg(long)]
    pub mixed_reads: bool,
    #[arg(long, default_value = "consistent")]
    pub scheme: ReadScheme,
    /// Step size; defaults to the largest certified one.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-step CSV (vectors included).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also validate the certificate over this many seeds.
    #[arg(long)]
    pub validate_seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = data::FIXTURE.n)]
    pub n: usize,
    #[arg(long, default_value_t = data::FIXTURE.d)]
    pub d: usize,
    #[arg(long, default_value_t = data::FIXTURE.seed)]
    pub seed: u64,
    #[arg(long, default_value_t = data::FIXTURE.separation)]
    pub separation: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn main_with(cli: Cli) -> ExitCode {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Speedup(a) => cmd_speedup(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Everything needed to launch one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub scheme: Scheme,
    pub workers: usize,
    pub eta: StepChoice,
    pub lambda: f64,
    pub epochs: usize,
    pub inner: Option<usize>,
    pub option: IterateOption,
    pub decay: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, scheme: Scheme, workers: usize, lambda: f64) -> Self {
        RunSpec {
            algorithm,
            scheme,
            workers,
            eta: StepChoice::Auto,
            lambda,
            epochs: 50,
            inner: None,
            option: IterateOption::CurrentIterate,
            decay: 0.9,
            seed: 0,
        }
    }

    fn from_args(a: &SolverArgs, lambda: f64) -> Self {
        RunSpec {
            algorithm: a.algorithm,
            scheme: a.scheme,
            workers: a.workers,
            eta: a.eta,
            lambda,
            epochs: a.epochs,
            inner: a.inner,
            option: a.option,
            decay: a.decay,
            seed: a.seed,
        }
    }

    /// Parses `algorithm[:key=value,...]`.
    pub fn parse_config(text: &str, lambda: f64) -> anyhow::Result<Self> {
        let (algo, rest) = text.split_once(':').unwrap_or((text, ""));
        let algorithm = Algorithm::from_str(algo.trim(), true).map_err(|e| anyhow::anyhow!(e))?;
        let mut spec = RunSpec::new(algorithm, Scheme::LockFree, 1, lambda);
        for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("expected key=value, got '{kv}'"))?;
            match k {
                "scheme" => spec.scheme = v.parse()?,
                "workers" | "p" => spec.workers = v.parse()?,
                "eta" => spec.eta = v.parse().map_err(|e: String| anyhow::anyhow!(e))?,
                "inner" => spec.inner = Some(v.parse()?),
                "option" => spec.option = v.parse()?,
                "decay" => spec.decay = v.parse()?,
                "seed" => spec.seed = v.parse()?,
                _ => bail!("unknown config key '{k}'"),
            }
        }
        Ok(spec)
    }

    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Asysvrg => format!("asysvrg-{}-p{}", self.scheme, self.workers),
            Algorithm::Svrg => "svrg".into(),
            Algorithm::Hogwild => {
                let lock = if self.scheme.is_locked() { "lock" } else { "lock-free" };
                format!("hogwild-{lock}-p{}", self.workers)
            }
        }
    }

    /// Effective passes consumed by one epoch.
    pub fn passes_per_epoch(&self, n: usize) -> f64 {
        let n_f = n as f64;
        match self.algorithm {
            Algorithm::Asysvrg => 1.0 + (self.workers * self.inner_for(n)) as f64 / n_f,
            Algorithm::Svrg => 1.0 + self.inner_for(n) as f64 / n_f,
            Algorithm::Hogwild => (self.workers * self.inner_for(n)) as f64 / n_f,
        }
    }

    fn inner_for(&self, n: usize) -> usize {
        match (self.inner, self.algorithm) {
            (Some(m), _) => m,
            (None, Algorithm::Asysvrg) => default_inner_iterations(n, self.workers),
            (None, Algorithm::Svrg) => 2 * n,
            (None, Algorithm::Hogwild) => (n / self.workers.max(1)).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
    Diverged { epoch: usize, objective: f64 },
}

impl RunStatus {
    fn name(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub eta: f64,
    pub status: RunStatus,
    pub metrics: RunMetrics,
    /// Wall time summed over epochs, up to the stopping epoch.
    pub solver_seconds: f64,
}

/// Stopping rule for a run.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub f_star: f64,
    /// Stop when the gap falls below this (disabled if not finite or ≤ 0).
    pub tol: f64,
    /// Stop once this many effective passes are used.
    pub pass_budget: Option<f64>,
}

fn run_with_step(data: &Dataset, spec: &RunSpec, eta: f64, stop: StopRule) -> crate::Result<(Trajectory, bool)> {
    let tol_active = stop.tol.is_finite() && stop.tol > 0.0;
    let mut converged = false;
    let observer = |o: &EpochOutcome, _: &[f64]| {
        if tol_active && o.objective - stop.f_star < stop.tol {
            converged = true;
            return Control::Stop;
        }
        if stop.pass_budget.is_some_and(|b| o.effective_passes >= b - 1e-9) {
            return Control::Stop;
        }
        Control::Continue
    };
    let n = data.len();
    let w0 = vec![0.0; data.dim()];
    let traj = match spec.algorithm {
        Algorithm::Asysvrg => {
            let cfg = SolverConfig {
                scheme: spec.scheme,
                step_size: eta,
                inner_iterations: spec.inner_for(n),
                workers: spec.workers,
                option: spec.option,
                epochs: spec.epochs,
                seed: spec.seed,
                lambda: spec.lambda,
                record_trace: false,
            };
            engine::run(data, &cfg, &w0, observer)?
        }
        Algorithm::Svrg => {
            let cfg = SvrgConfig {
                step_size: eta,
                inner_iterations: spec.inner_for(n),
                epochs: spec.epochs,
                seed: spec.seed,
                lambda: spec.lambda,
                option: spec.option,
            };
            svrg_sequential_observed(data, &w0, &cfg, Exec::default(), observer)?
        }
        Algorithm::Hogwild => {
            let cfg = HogwildConfig {
                step0: eta,
                decay: spec.decay,
                iters_per_worker: spec.inner_for(n),
                workers: spec.workers,
                seed: spec.seed,
                epochs: spec.epochs,
            };
            hogwild_run_observed(data, &cfg, spec.scheme.is_locked(), spec.lambda, &w0, observer)?
        }
    };
    Ok((traj, converged))
}

/// Picks the grid step with the lowest final objective over the full epoch
/// budget (no early stopping). Diverging candidates are skipped.
pub fn tune_step(data: &Dataset, spec: &RunSpec, stop: StopRule) -> crate::Result<f64> {
    let l = model::smoothness_constant(data, spec.lambda);
    let probe = StopRule { tol: 0.0, ..stop };
    let mut best: Option<(f64, f64)> = None;
    for c in STEP_GRID {
        let eta = c / l;
        match run_with_step(data, spec, eta, probe) {
            Ok((traj, _)) => {
                let f = *traj.objectives().last().unwrap();
                if best.is_none_or(|(_, bf)| f < bf) {
                    best = Some((eta, f));
                }
            }
            Err(Error::Diverged { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    best.map(|(eta, _)| eta)
        .ok_or_else(|| Error::Config("every step in the tuning grid diverged".into()))
}

/// Resolves `auto`, runs, and turns the trajectory into metrics. Divergence
/// is reported in the outcome rather than as an error.
pub fn execute(data: &Dataset, spec: &RunSpec, stop: StopRule) -> crate::Result<RunOutcome> {
    let eta = match spec.eta {
        StepChoice::Fixed(e) => e,
        StepChoice::Auto => tune_step(data, spec, stop)?,
    };
    match run_with_step(data, spec, eta, stop) {
        Ok((traj, converged)) => {
            let metrics = RunMetrics::from_trajectory(&traj, stop.f_star);
            let solver_seconds = traj.epochs.iter().map(|e| e.wall_seconds).sum();
            Ok(RunOutcome {
                eta,
                status: if converged {
                    RunStatus::Converged
                } else {
                    RunStatus::BudgetExhausted
                },
                metrics,
                solver_seconds,
            })
        }
        Err(Error::Diverged { epoch, objective, .. }) => {
            let mut metrics = RunMetrics::default();
            metrics.rows.push(metrics::MetricsRow {
                epoch,
                effective_passes: f64::NAN,
                objective,
                gap: objective - stop.f_star,
                wall_seconds: 0.0,
                updates: 0,
                max_delay: 0,
            });
            Ok(RunOutcome {
                eta,
                status: RunStatus::Diverged { epoch, objective },
                metrics,
                solver_seconds: f64::NAN,
            })
        }
        Err(e) => Err(e),
    }
}

fn dataset_header(m: &mut RunMetrics, data: &Dataset, source: &str, lambda: f64, f_star: f64) {
    let meta = dataset_stats(data, source);
    m.push_header("build", BUILD_ID);
    m.push_header("dataset", meta.source);
    m.push_header("n", meta.n);
    m.push_header("d", meta.d);
    m.push_header("nnz", meta.nnz);
    m.push_header("lambda", lambda);
    m.push_header("L", model::smoothness_constant(data, lambda));
    m.push_header("f_star", f_star);
    m.push_header("cores", cores());
}

fn spec_header(m: &mut RunMetrics, spec: &RunSpec, eta: f64, n: usize) {
    m.push_header("algorithm", format!("{:?}", spec.algorithm).to_lowercase());
    m.push_header("scheme", spec.scheme);
    m.push_header("workers", spec.workers);
    m.push_header("eta", eta);
    m.push_header("eta_mode", if spec.eta == StepChoice::Auto { "auto" } else { "fixed" });
    m.push_header("inner", spec.inner_for(n));
    m.push_header("option", spec.option);
    m.push_header("seed", spec.seed);
    if spec.algorithm == Algorithm::Hogwild {
        m.push_header("decay", spec.decay);
    }
    let nondeterministic =
        spec.workers > 1 && (spec.scheme == Scheme::LockFree || spec.algorithm == Algorithm::Hogwild);
    if nondeterministic {
        m.push_header(
            "determinism",
            "none: live lock-free interleavings depend on thread timing",
        );
    } else if spec.workers > 1 {
        m.push_header(
            "determinism",
            "per-seed sampling only: lock acquisition order depends on timing",
        );
    } else {
        m.push_header("determinism", "full");
    }
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let (data, source) = a.data.load()?;
    let spec = RunSpec::from_args(&a.solver, a.data.lambda);
    let opt = reference::load_or_solve(&data, spec.lambda)?;
    let stop = StopRule {
        f_star: opt.objective,
        tol: a.tol,
        pass_budget: None,
    };
    let outcome = execute(&data, &spec, stop)?;
    let mut m = RunMetrics {
        header: Vec::new(),
        rows: outcome.metrics.rows.clone(),
    };
    dataset_header(&mut m, &data, &source, spec.lambda, opt.objective);
    spec_header(&mut m, &spec, outcome.eta, data.len());
    m.push_header("epochs", spec.epochs);
    m.push_header("tol", a.tol);
    m.push_header("status", outcome.status.name());
    if a.omit_timing {
        m = m.without_timing();
    }
    emit(a.out.as_ref(), &m.to_csv())?;
    if let RunStatus::Diverged { epoch, objective } = outcome.status {
        eprintln!("diverged at epoch {epoch}: objective {objective} (eta {})", outcome.eta);
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<ExitCode> {
    let (data, source) = a.data.load()?;
    let opt = reference::load_or_solve(&data, a.data.lambda)?;
    let mut head = RunMetrics::default();
    dataset_header(&mut head, &data, &source, a.data.lambda, opt.objective);
    head.push_header("budget_passes", a.budget);
    let mut runs = Vec::new();
    let mut diverged = false;
    for text in &a.configs {
        let mut spec = RunSpec::parse_config(text, a.data.lambda)?;
        let label = spec.label();
        if a.budget <= 0.0 {
            head.push_header(format!("config.{label}"), text);
            runs.push((label, RunMetrics::default()));
            continue;
        }
        spec.epochs = (a.budget / spec.passes_per_epoch(data.len())).ceil() as usize;
        let stop = StopRule {
            f_star: opt.objective,
            tol: 0.0,
            pass_budget: Some(a.budget),
        };
        let outcome = execute(&data, &spec, stop)?;
        head.push_header(
            format!("config.{label}"),
            format!("{text} eta={} status={}", outcome.eta, outcome.status.name()),
        );
        diverged |= matches!(outcome.status, RunStatus::Diverged { .. });
        let m = if a.omit_timing {
            outcome.metrics.without_timing()
        } else {
            outcome.metrics
        };
        runs.push((label, m));
    }
    emit(a.out.as_ref(), &metrics::compare_csv(&head.header, &runs))?;
    Ok(if diverged {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_speedup(a: SpeedupArgs) -> anyhow::Result<ExitCode> {
    let (data, source) = a.data.load()?;
    let opt = reference::load_or_solve(&data, a.data.lambda)?;
    let threads: Vec<usize> = a
        .threads
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("--threads must be a comma-separated list of integers")?;
    if threads.is_empty() || threads.contains(&0) {
        bail!("--threads needs positive worker counts");
    }
    let stop = StopRule {
        f_star: opt.objective,
        tol: a.tol,
        pass_budget: None,
    };
    let mut head = RunMetrics::default();
    dataset_header(&mut head, &data, &source, a.data.lambda, opt.objective);
    head.push_header("scheme", a.scheme);
    head.push_header("tol", a.tol);
    let mut rows = Vec::new();
    let mut base = None;
    for &p in &threads {
        let mut spec = RunSpec::new(Algorithm::Asysvrg, a.scheme, p, a.data.lambda);
        spec.epochs = a.epochs;
        spec.eta = match a.eta {
            StepChoice::Fixed(e) => StepChoice::Fixed(e),
            StepChoice::Auto => StepChoice::Fixed(tune_step(&data, &spec, stop)?),
        };
        let mut times = Vec::new();
        for seed in 0..a.seeds {
            spec.seed = seed;
            let out = execute(&data, &spec, stop)?;
            if out.status == RunStatus::Converged {
                times.push(out.solver_seconds);
            }
        }
        let converged = times.len();
        let all = converged as u64 == a.seeds;
        let median_seconds = if all { metrics::median(&mut times) } else { None };
        if p == 1 {
            base = median_seconds;
        }
        rows.push(SpeedupRow {
            workers: p,
            median_seconds,
            speedup: None,
            converged,
            seeds: a.seeds as usize,
        });
    }
    for r in &mut rows {
        r.speedup = match (base, r.median_seconds) {
            (Some(b), Some(t)) if t > 0.0 => Some(b / t),
            _ => None,
        };
    }
    emit(a.out.as_ref(), &metrics::speedup_csv(&head.header, &rows))?;
    Ok(ExitCode::SUCCESS)
}

fn certify_constants(a: &CertifyArgs) -> anyhow::Result<(f64, f64, f64)> {
    let need_data = a.smoothness.is_none() || a.m_tilde.is_none();
    let data = if need_data { Some(a.data.load()?.0) } else { None };
    let l = match a.smoothness {
        Some(l) => l,
        None => model::smoothness_constant(data.as_ref().unwrap(), a.data.lambda),
    };
    let mu = a.mu.unwrap_or(a.data.lambda);
    let m_tilde = match a.m_tilde {
        Some(m) => m,
        None => 2.0 * data.as_ref().unwrap().len() as f64,
    };
    Ok((l, mu, m_tilde))
}

fn cmd_certify(a: CertifyArgs) -> anyhow::Result<ExitCode> {
    let (l, mu, m_tilde) = certify_constants(&a)?;
    let cert = match a.eta {
        Some(eta) => theory::certify(a.scheme, l, mu, eta, a.tau, m_tilde, a.r),
        None => match theory::max_certified_step(l, mu, a.tau, m_tilde, a.scheme) {
            Some(c) => c,
            None => {
                println!(
                    "scheme={}\nL={l}\nmu={mu}\ntau={}\nm_tilde={m_tilde}\nvalid=false\nviolated=no_certified_step",
                    a.scheme, a.tau
                );
                eprintln!("no step size in [{}, 1/(2L)] is certified", theory::ETA_FLOOR);
                return Ok(ExitCode::from(EXIT_INVALID));
            }
        },
    };
    print!("{}", cert.to_text());
    if cert.valid {
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<_> = cert.violated_conditions.iter().map(|c| c.name()).collect();
        eprintln!("certificate invalid: {}", names.join(", "));
        Ok(ExitCode::from(EXIT_INVALID))
    }
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let (data, _) = a.data.load()?;
    let lambda = a.data.lambda;
    let schedule = match (&a.schedule, a.generate) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Schedule::parse(&text).with_context(|| format!("schedule {}", path.display()))?
        }
        (None, kind) => {
            let updates = a.updates.unwrap_or(2 * data.len());
            match kind.unwrap_or(ScheduleKind::Alternating) {
                ScheduleKind::Alternating => Schedule::alternating(updates),
                ScheduleKind::RoundRobin => Schedule::round_robin(a.workers, updates),
                ScheduleKind::Random => {
                    Schedule::random_bounded(a.workers, a.tau, updates, data.dim(), a.seed, a.mixed_reads)
                }
            }
        }
    };
    let l = model::smoothness_constant(&data, lambda);
    let mu = model::strong_convexity_constant(lambda)?;
    let tau = schedule.tau() as u32;
    let m_tilde = schedule.updates() as f64;
    let cert = match a.eta {
        Some(eta) => theory::certify(a.scheme, l, mu, eta, tau, m_tilde, None),
        None => theory::max_certified_step(l, mu, tau, m_tilde, a.scheme)
            .context("no certified step size exists for this schedule; pass --eta")?,
    };
    let cfg = SimConfig {
        scheme: a.scheme,
        step_size: cert.step_size,
        lambda,
        epochs: a.epochs,
        seed: a.seed,
        record_steps: true,
    };
    let opt = reference::load_or_solve(&data, lambda)?;
    let w0 = vec![0.0; data.dim()];
    let log = match sim::simulate(&data, &cfg, &schedule, &w0) {
        Ok(log) => log,
        Err(Error::Diverged { epoch, objective, .. }) => {
            eprintln!("simulation diverged at epoch {epoch}: objective {objective}");
            return Ok(ExitCode::from(EXIT_DIVERGED));
        }
        Err(e) => return Err(e.into()),
    };
    let exec = Exec::default();
    let q = sim::measure_q_sequence(exec, &data, &log, lambda)?;
    let var = sim::check_variance_bound(exec, &data, &log, &q, lambda, opt.objective)?;
    if let Some(path) = &a.out {
        fs::write(path, log.steps_csv(Some(&q))).with_context(|| format!("writing {}", path.display()))?;
        let epochs_path = path.with_extension("epochs.csv");
        fs::write(&epochs_path, log.epochs_csv(Some(opt.objective)))?;
    }

    let c = &log.checks;
    let mut ok = c.clean() && var.violations == 0;
    let line = |name: &str, checked: usize, failed: usize| {
        let verdict = if failed == 0 { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} checked, {failed} failed", checked);
    };
    println!(
        "schedule: {} events, {} updates, tau={}, workers={}",
        schedule.events().len(),
        schedule.updates(),
        schedule.tau(),
        schedule.workers()
    );
    println!(
        "step size: {} (certificate valid: {}, rate {})",
        cert.step_size, cert.valid, cert.rate
    );
    line("delay bound m - a(m) <= tau", c.applies, c.delay_violations);
    line("read reconstruction P1 u_a + P2 u_(a+1)", c.applies, c.read_mismatches);
    line("mask partition", c.split_reads, c.mask_violations);
    line("step expansion (m - a) * sum", c.applies, c.step_bound_violations);
    if schedule.tau() <= 4 {
        line("step expansion 4 * sum", c.applies, c.step_bound4_violations);
    } else {
        println!(
            "INFO step expansion 4 * sum: {} of {} exceed it (only guaranteed for tau <= 4)",
            c.step_bound4_violations, c.applies
        );
    }
    line(
        "variance bound q_m <= 4L(gap(u_m) + gap(u_0))",
        var.checked,
        var.violations,
    );
    if schedule.workers() <= 1 && schedule.tau() == 0 {
        let seq = svrg_sequential_observed(
            &data,
            &w0,
            &SvrgConfig {
                step_size: cfg.step_size,
                inner_iterations: schedule.updates(),
                epochs: cfg.epochs,
                seed: cfg.seed,
                lambda,
                option: IterateOption::AverageIterate,
            },
            exec,
            crate::trajectory::run_all,
        )?;
        let same = seq
            .iterates
            .iter()
            .zip(&log.epochs)
            .all(|(a, b)| a.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits()));
        ok &= same;
        println!(
            "{} bitwise match with sequential SVRG",
            if same { "PASS" } else { "FAIL" }
        );
    }
    let gaps: Vec<String> = log
        .objectives()
        .iter()
        .map(|f| format!("{:.3e}", f - opt.objective))
        .collect();
    println!("gaps: {}", gaps.join(" "));
    if let Some(seeds) = a.validate_seeds {
        if cert.valid {
            let mut opts = ValidationOptions::new(lambda, opt.objective);
            opts.seeds = seeds;
            opts.epochs = a.epochs;
            opts.workers = Some(schedule.workers().max(1));
            let v = sim::validate_certificate(exec, &data, &cert, &opts, &w0)?;
            println!(
                "{} certificate: worst mean gap ratio {:.4} vs rate {:.4} + {} over {} seeds ({} diverged)",
                if v.pass { "PASS" } else { "FAIL" },
                v.worst_ratio,
                v.rate,
                opts.slack,
                v.seeds,
                v.diverged_seeds
            );
            ok &= v.pass;
        } else {
            println!("SKIP certificate validation: step size is not certified");
        }
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    })
}

fn cmd_gen_data(a: GenDataArgs) -> anyhow::Result<ExitCode> {
    let spec = SyntheticSpec {
        n: a.n,
        d: a.d,
        seed: a.seed,
        separation: a.separation,
    };
    let data = spec.generate()?;
    let text = format!("{}\n{}", spec.header(), data::serialize_libsvm(&data));
    emit(a.out.as_ref(), &text)?;
    Ok(ExitCode::SUCCESS)
}
