//! Reference solvers: single-threaded SVRG and Hogwild!.

use std::thread;
use std::time::Instant;

use rand::Rng;

use crate::engine::{IterateOption, Scheme, SharedState};
use crate::error::{Error, Result};
use crate::model::{loss_slope, Anchor, Dataset};
use crate::par::Exec;
use crate::rng::worker_stream;
use crate::trajectory::{run_all, Control, EpochOutcome, Monitor, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct SvrgConfig {
    pub step_size: f64,
    /// Inner steps per epoch; zero leaves the iterate untouched.
    pub inner_iterations: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub option: IterateOption,
}

impl SvrgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("regularizer must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Plain SVRG with one worker and no delay. Uses the same sampling stream,
/// direction and update arithmetic as a one-worker engine run, so the two
/// agree bit for bit.
pub fn svrg_sequential(data: &Dataset, w0: &[f64], cfg: &SvrgConfig) -> Result<Trajectory> {
    svrg_sequential_observed(data, w0, cfg, Exec::default(), run_all)
}

pub fn svrg_sequential_observed<F>(
    data: &Dataset,
    w0: &[f64],
    cfg: &SvrgConfig,
    exec: Exec,
    observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&EpochOutcome, &[f64]) -> Control,
{
    cfg.validate()?;
    let mut monitor = Monitor::new(data, cfg.lambda, exec, w0, observer)?;
    let d = data.dim();
    let n = data.len();
    let mut w = w0.to_vec();
    let mut u = vec![0.0; d];
    let mut step = vec![0.0; d];
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let anchor = Anchor::new(exec, data, &w, cfg.lambda)?;
        let mut rng = worker_stream(cfg.seed, 0, epoch);
        u.copy_from_slice(&w);
        let mut sum = (cfg.option == IterateOption::AverageIterate).then(|| vec![0.0; d]);
        for _ in 0..cfg.inner_iterations {
            let i = rng.random_range(0..n);
            if let Some(sum) = sum.as_mut() {
                for (s, x) in sum.iter_mut().zip(&u) {
                    *s += x;
                }
            }
            anchor.direction_into(data, i, &u, cfg.lambda, &mut step);
            for (x, v) in u.iter_mut().zip(&step) {
                *x += *v * -cfg.step_size;
            }
        }
        if cfg.inner_iterations > 0 {
            w = match sum {
                Some(sum) => {
                    let count = cfg.inner_iterations as f64;
                    sum.into_iter().map(|s| s / count).collect()
                }
                None => u.clone(),
            };
        }
        let wall = start.elapsed().as_secs_f64();
        let updates = cfg.inner_iterations as u64;
        let passes = 1.0 + updates as f64 / n as f64;
        if monitor.record(w.clone(), passes, updates, 0, wall)? == Control::Stop {
            break;
        }
    }
    Ok(monitor.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HogwildConfig {
    /// Initial step γ.
    pub step0: f64,
    /// γ ← decay·γ after each epoch.
    pub decay: f64,
    pub iters_per_worker: usize,
    pub workers: usize,
    pub seed: u64,
    pub epochs: usize,
}

impl HogwildConfig {
    /// `n/p` iterations per worker and a 0.9 decay.
    pub fn new(step0: f64, workers: usize, n: usize) -> Self {
        HogwildConfig {
            step0,
            decay: 0.9,
            iters_per_worker: (n / workers.max(1)).max(1),
            workers,
            seed: 0,
            epochs: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step0 >= 0.0 && self.step0.is_finite()) {
            return Err(Error::Config(format!("initial step must be >= 0, got {}", self.step0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count p must be >= 1".into()));
        }
        Ok(())
    }

    /// Step used during epoch `epoch` (0-based).
    pub fn step_at(&self, epoch: usize) -> f64 {
        let mut g = self.step0;
        for _ in 0..epoch {
            g *= self.decay;
        }
        g
    }
}

/// Writes `−γ∇f_i(w)` into `out`.
#[inline]
fn sgd_step_into(data: &Dataset, i: usize, w: &[f64], lambda: f64, gamma: f64, out: &mut [f64]) {
    let ex = data.example(i);
    let slope = loss_slope(ex.label(), ex.dot(w));
    for (o, x) in out.iter_mut().zip(w) {
        *o = lambda * x;
    }
    for (j, v) in ex.iter() {
        out[j] += slope * v;
    }
    for o in out.iter_mut() {
        *o *= -gamma;
    }
}

/// Hogwild!: every worker samples, reads `w` without coordination and
/// applies `−γ∇f_i(w)`. `lock` serializes the writes; otherwise each element
/// is added atomically with no lock at all.
pub fn hogwild_run(data: &Dataset, cfg: &HogwildConfig, lock: bool, lambda: f64) -> Result<Trajectory> {
    hogwild_run_observed(data, cfg, lock, lambda, &vec![0.0; data.dim()], run_all)
}

pub fn hogwild_run_observed<F>(
    data: &Dataset,
    cfg: &HogwildConfig,
    lock: bool,
    lambda: f64,
    w0: &[f64],
    observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&EpochOutcome, &[f64]) -> Control,
{
    cfg.validate()?;
    if w0.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            actual: w0.len(),
        });
    }
    let scheme = if lock {
        Scheme::InconsistentLock
    } else {
        Scheme::LockFree
    };
    let mut monitor = Monitor::new(data, lambda, Exec::default(), w0, observer)?;
    let mut state = SharedState::new(w0);
    let mut w = w0.to_vec();
    let n = data.len();
    let d = data.dim();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let gamma = cfg.step_at(epoch);
        state.reset(&w, false);
        let state_ref = &state;
        let results: Vec<Result<u64>> = thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.workers)
                .map(|id| {
                    s.spawn(move || {
                        let mut rng = worker_stream(cfg.seed, id, epoch);
                        let mut read = vec![0.0; d];
                        let mut step = vec![0.0; d];
                        let mut max_delay = 0;
                        for _ in 0..cfg.iters_per_worker {
                            let i = rng.random_range(0..n);
                            let stamp = state_ref.read(scheme, &mut read);
                            sgd_step_into(data, i, &read, lambda, gamma, &mut step);
                            let m = state_ref.write(scheme, &step);
                            max_delay = u64::max(max_delay, m - stamp);
                        }
                        max_delay
                    })
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(id, h)| {
                    h.join()
                        .map_err(|_| Error::WorkerFailed(format!("hogwild worker {id} in epoch {epoch} panicked")))
                })
                .collect()
        });
        let mut max_delay = 0;
        for r in results {
            max_delay = max_delay.max(r?);
        }
        w = state.load();
        let updates = state.updates();
        let wall = start.elapsed().as_secs_f64();
        if monitor.record(w.clone(), updates as f64 / n as f64, updates, max_delay, wall)? == Control::Stop {
            break;
        }
    }
    Ok(monitor.finish())
}
