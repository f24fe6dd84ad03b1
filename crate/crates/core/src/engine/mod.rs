//! The live multi-threaded solver.
//!
//! Each outer epoch computes the full gradient at the current snapshot, then
//! `p` worker threads each run `M` inner steps against a [`SharedState`]:
//! sample `i` uniformly, read `û` per the scheme, form
//! `v̂ = ∇f_i(û) − ∇f_i(u0) + g0` and apply `u ← u − ηv̂`. The next snapshot is
//! either the final shared iterate (Option 1) or the average of the iterates
//! the inner loop produced (Option 2).
//!
//! Delays are measured, never enforced: every update records the counter
//! value seen when its read began, and `m − stamp` is the observed staleness.

mod shared;

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use shared::{AtomicF64, SharedState};

use crate::error::{Error, Result};
use crate::model::{Anchor, Dataset};
use crate::par::Exec;
use crate::rng::worker_stream;
use crate::trajectory::{Control, EpochOutcome, Monitor, Trajectory};

/// How workers coordinate access to the shared iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// One lock guards both reads and writes; every read is a coherent `u_k`.
    ConsistentLock,
    /// Writes are locked, reads are not; a read may mix two ages.
    InconsistentLock,
    /// No locks; element-atomic reads and relaxed element-atomic adds.
    LockFree,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ConsistentLock, Scheme::InconsistentLock, Scheme::LockFree];

    pub fn is_locked(self) -> bool {
        !matches!(self, Scheme::LockFree)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ConsistentLock => "consistent",
            Scheme::InconsistentLock => "inconsistent",
            Scheme::LockFree => "lock-free",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consistent" | "consistent-lock" => Ok(Scheme::ConsistentLock),
            "inconsistent" | "inconsistent-lock" | "lock" => Ok(Scheme::InconsistentLock),
            "lock-free" | "lockfree" | "unlock" => Ok(Scheme::LockFree),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

/// How the next snapshot is taken from the inner loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IterateOption {
    /// Option 1: the shared iterate at the end of the inner loop.
    CurrentIterate,
    /// Option 2: `(1/M̃) Σ_{m<M̃} u_m`.
    AverageIterate,
}

impl FromStr for IterateOption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "current" => Ok(IterateOption::CurrentIterate),
            "2" | "average" => Ok(IterateOption::AverageIterate),
            _ => Err(Error::Config(format!("unknown iterate option '{s}'"))),
        }
    }
}

impl fmt::Display for IterateOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IterateOption::CurrentIterate => "current",
            IterateOption::AverageIterate => "average",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// η
    pub step_size: f64,
    /// M, inner steps per worker per epoch.
    pub inner_iterations: usize,
    /// p
    pub workers: usize,
    pub option: IterateOption,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Keep every (m, stamp, worker) record instead of just the maximum delay.
    pub record_trace: bool,
}

/// The experimental default `M = 2n/p` (at least one step).
pub fn default_inner_iterations(n: usize, workers: usize) -> usize {
    (2 * n / workers.max(1)).max(1)
}

impl SolverConfig {
    pub fn new(scheme: Scheme, step_size: f64, workers: usize, n: usize, lambda: f64) -> Self {
        SolverConfig {
            scheme,
            step_size,
            inner_iterations: default_inner_iterations(n, workers),
            workers,
            option: IterateOption::CurrentIterate,
            epochs: 10,
            seed: 0,
            lambda,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.inner_iterations == 0 {
            return Err(Error::Config("inner iterations M must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count p must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("regularizer must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayRecord {
    /// Index `m` of the applied update within the epoch.
    pub update: u64,
    /// Counter value when the read that produced it began.
    pub read_stamp: u64,
    pub worker: usize,
}

impl DelayRecord {
    pub fn delay(&self) -> u64 {
        self.update - self.read_stamp
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayTrace {
    /// Sorted by `update`; empty unless tracing was requested.
    pub records: Vec<DelayRecord>,
    pub max_delay: u64,
}

#[derive(Clone, Debug)]
pub struct EpochReport {
    pub snapshot: Vec<f64>,
    pub updates: u64,
    pub trace: DelayTrace,
    pub wall_seconds: f64,
}

/// Per-worker scratch space and sampling stream.
pub struct WorkerCtx {
    pub id: usize,
    rng: ChaCha8Rng,
    read_buf: Vec<f64>,
    step_buf: Vec<f64>,
    /// Σ û over this worker's reads; Option 2 under the lock-free scheme.
    read_sum: Option<Vec<f64>>,
}

impl WorkerCtx {
    pub fn new(id: usize, seed: u64, epoch: usize, dim: usize, sum_reads: bool) -> Self {
        WorkerCtx {
            id,
            rng: worker_stream(seed, id, epoch),
            read_buf: vec![0.0; dim],
            step_buf: vec![0.0; dim],
            read_sum: sum_reads.then(|| vec![0.0; dim]),
        }
    }
}

/// One inner iteration: sample, read, compute `v̂`, apply `−ηv̂`.
pub fn inner_step(
    state: &SharedState,
    data: &Dataset,
    anchor: &Anchor,
    cfg: &SolverConfig,
    ctx: &mut WorkerCtx,
) -> DelayRecord {
    let i = ctx.rng.random_range(0..data.len());
    let read_stamp = state.read(cfg.scheme, &mut ctx.read_buf);
    if let Some(sum) = ctx.read_sum.as_mut() {
        for (s, u) in sum.iter_mut().zip(&ctx.read_buf) {
            *s += u;
        }
    }
    anchor.direction_into(data, i, &ctx.read_buf, cfg.lambda, &mut ctx.step_buf);
    let eta = cfg.step_size;
    for v in ctx.step_buf.iter_mut() {
        *v *= -eta;
    }
    let update = state.write(cfg.scheme, &ctx.step_buf);
    DelayRecord {
        update,
        read_stamp,
        worker: ctx.id,
    }
}

struct WorkerResult {
    records: Vec<DelayRecord>,
    max_delay: u64,
    read_sum: Option<Vec<f64>>,
}

/// Drives the outer loop; owns the shared state and the snapshot `w_t`.
pub struct Engine<'a> {
    data: &'a Dataset,
    cfg: SolverConfig,
    w: Vec<f64>,
    state: SharedState,
    exec: Exec,
    #[cfg(feature = "parallel")]
    pool: rayon::ThreadPool,
}

impl<'a> Engine<'a> {
    pub fn new(data: &'a Dataset, cfg: SolverConfig, w0: &[f64]) -> Result<Self> {
        cfg.validate()?;
        if w0.len() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                actual: w0.len(),
            });
        }
        Ok(Engine {
            data,
            w: w0.to_vec(),
            state: SharedState::new(w0),
            exec: Exec::default(),
            #[cfg(feature = "parallel")]
            pool: rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::WorkerFailed(e.to_string()))?,
            cfg,
        })
    }

    /// Selects how the full gradient and monitoring sums run. Results are
    /// bitwise identical either way.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> &[f64] {
        &self.w
    }

    /// Runs `f` on the engine's `p`-thread pool (or inline without `parallel`).
    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            self.pool.install(f)
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }

    /// One outer iteration; `epoch` (0-based) selects the sampling streams.
    pub fn run_outer_epoch(&mut self, epoch: usize) -> Result<EpochReport> {
        let start = Instant::now();
        let (data, exec, lambda) = (self.data, self.exec, self.cfg.lambda);
        let w = &self.w;
        let anchor = self.install(|| Anchor::new(exec, data, w, lambda))?;

        let averaging = self.cfg.option == IterateOption::AverageIterate;
        let locked_sum = averaging && self.cfg.scheme.is_locked();
        let read_sum = averaging && !self.cfg.scheme.is_locked();
        self.state.reset(&self.w, locked_sum);

        let cfg = &self.cfg;
        let state = &self.state;
        let anchor = &anchor;
        let dim = data.dim();
        let joined: Vec<Result<WorkerResult>> = thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.workers)
                .map(|id| {
                    thread::Builder::new()
                        .name(format!("asysvrg-worker-{id}"))
                        .spawn_scoped(s, move || {
                            let mut ctx = WorkerCtx::new(id, cfg.seed, epoch, dim, read_sum);
                            let mut records = Vec::new();
                            let mut max_delay = 0;
                            for _ in 0..cfg.inner_iterations {
                                let rec = inner_step(state, data, anchor, cfg, &mut ctx);
                                max_delay = max_delay.max(rec.delay());
                                if cfg.record_trace {
                                    records.push(rec);
                                }
                            }
                            WorkerResult {
                                records,
                                max_delay,
                                read_sum: ctx.read_sum,
                            }
                        })
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(id, h)| {
                    let h = h.map_err(|e| Error::WorkerFailed(format!("spawning worker {id}: {e}")))?;
                    h.join().map_err(|panic| {
                        let msg = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "unknown panic".into());
                        Error::WorkerFailed(format!("worker {id} in epoch {epoch}: {msg}"))
                    })
                })
                .collect()
        });

        let mut trace = DelayTrace::default();
        // Merged in worker order, starting from worker 0's sum itself so a
        // single worker reproduces the sequential sum exactly.
        let mut read_total: Option<Vec<f64>> = None;
        for res in joined {
            let res = res?;
            trace.max_delay = trace.max_delay.max(res.max_delay);
            trace.records.extend(res.records);
            match (read_total.as_mut(), res.read_sum) {
                (Some(total), Some(part)) => {
                    for (t, p) in total.iter_mut().zip(part) {
                        *t += p;
                    }
                }
                (None, part) => read_total = part,
                _ => {}
            }
        }
        trace.records.sort_by_key(|r| r.update);

        let updates = self.state.updates();
        let expected = (cfg.workers * cfg.inner_iterations) as u64;
        if updates != expected {
            return Err(Error::WorkerFailed(format!(
                "epoch {epoch} applied {updates} updates, expected {expected}"
            )));
        }
        self.w = match self.cfg.option {
            IterateOption::CurrentIterate => self.state.load(),
            IterateOption::AverageIterate => {
                let sum = self
                    .state
                    .take_running_sum()
                    .or(read_total)
                    .expect("running sum enabled for Option 2");
                let count = updates as f64;
                sum.into_iter().map(|s| s / count).collect()
            }
        };
        Ok(EpochReport {
            snapshot: self.w.clone(),
            updates,
            trace,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs `cfg.epochs` outer iterations from `w0`, stopping early when the
/// observer asks to.
pub fn run<F>(data: &Dataset, cfg: &SolverConfig, w0: &[f64], observer: F) -> Result<Trajectory>
where
    F: FnMut(&EpochOutcome, &[f64]) -> Control,
{
    let mut engine = Engine::new(data, cfg.clone(), w0)?;
    let exec = engine.exec;
    // Monitoring sums are reduced over a fixed tree, so they need not run on the
    // engine's pool.
    let mut monitor = Monitor::new(data, cfg.lambda, exec, w0, observer)?;
    let n = data.len() as f64;
    for epoch in 0..cfg.epochs {
        let report = engine.run_outer_epoch(epoch)?;
        let passes = 1.0 + report.updates as f64 / n;
        let control = monitor.record(
            report.snapshot,
            passes,
            report.updates,
            report.trace.max_delay,
            report.wall_seconds,
        )?;
        if control == Control::Stop {
            break;
        }
    }
    Ok(monitor.finish())
}
