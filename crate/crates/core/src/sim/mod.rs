//! Single-threaded replay of asynchronous executions.
//!
//! Virtual workers follow an explicit [`Schedule`]. A snapshot copies the
//! shared iterate (and draws the worker's instance); an apply computes
//! `v̂ = ∇f_i(û) − ∇f_i(u0) + g0` from that copy and performs
//! `u ← u − ηv̂`. A split snapshot, allowed only for inconsistent reads,
//! yields `û = P_{g1} u_a + P_{g2} u_{a+1}`, mixing two consecutive ages.
//!
//! The next snapshot is always the average `(1/M̃) Σ_{m<M̃} u_m`.
//!
//! Every apply is checked as it happens: the read is rebuilt from the stored
//! iterate history and compared bit for bit, the delay is compared to τ, and
//! `‖û − u_m‖²` is compared with the telescoped step lengths.

mod analysis;
mod schedule;

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

pub use analysis::{
    check_variance_bound, measure_q_sequence, q_ratio_check, q_sequences, validate_certificate, CertificateValidation,
    QPoint, RatioCheck, ValidationOptions, VarianceCheck,
};
pub use schedule::{Action, ApplyTiming, Event, Schedule};

use crate::error::{Error, Result};
use crate::model::{self, dist_sq, Anchor, Dataset};
use crate::par::Exec;
use crate::rng::worker_stream;
use crate::theory::ReadScheme;
use crate::trajectory::DIVERGENCE_FACTOR;

/// A partition of `0..dim` into g₁ (older age) and g₂ (newer age).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionMask {
    dim: usize,
    g2: Vec<u32>,
}

impl ProjectionMask {
    /// All coordinates in g₁: an unmixed read.
    pub fn whole(dim: usize) -> Self {
        ProjectionMask { dim, g2: Vec::new() }
    }

    pub fn new(dim: usize, mut g2: Vec<u32>) -> Result<Self> {
        g2.sort_unstable();
        g2.dedup();
        if let Some(&j) = g2.last() {
            if j as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: j as usize + 1,
                });
            }
        }
        Ok(ProjectionMask { dim, g2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn g2(&self) -> &[u32] {
        &self.g2
    }

    pub fn g1(&self) -> Vec<u32> {
        let mut newer = self.g2.iter().peekable();
        (0..self.dim as u32)
            .filter(|j| {
                if newer.peek() == Some(&j) {
                    newer.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    /// `P_{g1} + P_{g2} = I`: the two sets are disjoint and cover `0..dim`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![0u8; self.dim];
        for j in self.g1().into_iter().chain(self.g2.iter().copied()) {
            match seen.get_mut(j as usize) {
                Some(s) => *s += 1,
                None => return false,
            }
        }
        seen.iter().all(|&s| s == 1)
    }

    /// `out = P_{g1} older + P_{g2} newer`.
    pub fn combine(&self, older: &[f64], newer: &[f64], out: &mut [f64]) {
        out.copy_from_slice(older);
        for &j in &self.g2 {
            out[j as usize] = newer[j as usize];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub scheme: ReadScheme,
    pub step_size: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Keep every step's vectors; needed for q measurements and step CSV.
    pub record_steps: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// `m`
    pub update: usize,
    pub worker: usize,
    pub instance: usize,
    /// `a(m)`
    pub read_stamp: usize,
    /// `u_m`, the iterate the update is applied to.
    pub u: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 0-based; record `t` holds `w_t`.
    pub epoch: usize,
    pub w: Vec<f64>,
    pub objective: f64,
}

/// Counters from the per-apply checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimChecks {
    pub applies: usize,
    pub max_delay: usize,
    pub delay_violations: usize,
    pub split_reads: usize,
    pub mask_violations: usize,
    pub read_mismatches: usize,
    /// `‖û − u_m‖² ≤ (m−a) Σ_{l=a}^{m−1} ‖u_l − u_{l+1}‖²`, which always holds.
    pub step_bound_violations: usize,
    /// The same with the fixed factor 4; guaranteed only while `m − a ≤ 4`.
    pub step_bound4_violations: usize,
}

impl SimChecks {
    pub fn clean(&self) -> bool {
        self.delay_violations == 0
            && self.mask_violations == 0
            && self.read_mismatches == 0
            && self.step_bound_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub tau: usize,
    /// M̃
    pub updates_per_epoch: usize,
    pub steps: Vec<StepRecord>,
    /// `w_0, …, w_T` with objectives.
    pub epochs: Vec<EpochRecord>,
    /// `u_{M̃}` at the end of each epoch.
    pub epoch_ends: Vec<Vec<f64>>,
    pub checks: SimChecks,
}

impl TrajectoryLog {
    pub fn final_iterate(&self) -> &[f64] {
        &self.epochs.last().expect("log has w_0").w
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.objective).collect()
    }

    /// Steps of one epoch, in update order.
    pub fn epoch_steps(&self, epoch: usize) -> &[StepRecord] {
        let lo = self.steps.partition_point(|s| s.epoch < epoch);
        let hi = self.steps.partition_point(|s| s.epoch <= epoch);
        &self.steps[lo..hi]
    }

    /// Per-step CSV; vectors are space-separated inside their field.
    pub fn steps_csv(&self, q: Option<&[QPoint]>) -> String {
        let mut out = String::from("epoch,update,worker,instance,read_stamp,delay,q,q_hat,u,u_hat,v_hat\n");
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        for (k, s) in self.steps.iter().enumerate() {
            let (qm, qh) = match q.and_then(|q| q.get(k)) {
                Some(p) => (p.q.to_string(), p.q_hat.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.epoch,
                s.update,
                s.worker,
                s.instance,
                s.read_stamp,
                s.update - s.read_stamp,
                qm,
                qh,
                join(&s.u),
                join(&s.u_hat),
                join(&s.v_hat)
            )
            .unwrap();
        }
        out
    }

    pub fn epochs_csv(&self, f_star: Option<f64>) -> String {
        let mut out = String::from("epoch,objective,gap\n");
        for e in &self.epochs {
            let gap = f_star.map(|f| (e.objective - f).to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, e.objective, gap).unwrap();
        }
        out
    }
}

struct Slot {
    instance: usize,
    stamp: usize,
    u_hat: Vec<f64>,
    /// g₂ still to be filled from `u_{stamp+1}`.
    pending_split: Option<ProjectionMask>,
    mask: ProjectionMask,
}

/// Replays `schedule` once per epoch.
pub fn simulate(data: &Dataset, cfg: &SimConfig, schedule: &Schedule, w0: &[f64]) -> Result<TrajectoryLog> {
    if !(cfg.step_size > 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::Config(format!(
            "step size must be positive, got {}",
            cfg.step_size
        )));
    }
    let d = data.dim();
    if w0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: w0.len(),
        });
    }
    for e in schedule.events() {
        if let Some(g2) = &e.split {
            if cfg.scheme == ReadScheme::Consistent {
                return Err(Error::Parse {
                    line: e.line,
                    reason: "split reads cannot happen under consistent reads".into(),
                });
            }
            if g2.last().is_some_and(|&j| j as usize >= d) {
                return Err(Error::Parse {
                    line: e.line,
                    reason: format!("coordinate {} outside dimension {d}", g2.last().unwrap()),
                });
            }
        }
    }
    let exec = Exec::Sequential;
    let tau = schedule.tau();
    let workers = schedule.workers();
    let big_m = schedule.updates();
    let n = data.len();
    let eta = cfg.step_size;

    let initial = model::objective_exec(exec, data, w0, cfg.lambda)?;
    let mut log = TrajectoryLog {
        tau,
        updates_per_epoch: big_m,
        steps: Vec::new(),
        epochs: vec![EpochRecord {
            epoch: 0,
            w: w0.to_vec(),
            objective: initial,
        }],
        epoch_ends: Vec::new(),
        checks: SimChecks::default(),
    };
    let mut w = w0.to_vec();
    let mut step = vec![0.0; d];
    let mut rebuilt = vec![0.0; d];
    for epoch in 0..cfg.epochs {
        let anchor = Anchor::new(exec, data, &w, cfg.lambda)?;
        let mut rngs: Vec<_> = (0..workers).map(|k| worker_stream(cfg.seed, k, epoch)).collect();
        let mut slots: Vec<Option<Slot>> = (0..workers).map(|_| None).collect();
        let mut u = w.clone();
        let mut sum = vec![0.0; d];
        // history[k] = u_{base + k}; step_sq[k] = ‖u_{base+k} − u_{base+k+1}‖².
        let mut history: VecDeque<Vec<f64>> = VecDeque::from([u.clone()]);
        let mut step_sq: VecDeque<f64> = VecDeque::new();
        let mut base = 0usize;
        let mut m = 0usize;
        for e in schedule.events() {
            match e.action {
                Action::Snapshot => {
                    let instance = rngs[e.worker].random_range(0..n);
                    let (pending_split, mask) = match &e.split {
                        Some(g2) => {
                            let mask = ProjectionMask::new(d, g2.clone())?;
                            log.checks.split_reads += 1;
                            (Some(mask.clone()), mask)
                        }
                        None => (None, ProjectionMask::whole(d)),
                    };
                    slots[e.worker] = Some(Slot {
                        instance,
                        stamp: m,
                        u_hat: u.clone(),
                        pending_split,
                        mask,
                    });
                }
                Action::Apply => {
                    let slot = slots[e.worker].take().expect("schedule validated");
                    let a = slot.stamp;
                    let checks = &mut log.checks;
                    checks.applies += 1;
                    checks.max_delay = checks.max_delay.max(m - a);
                    if m - a > tau {
                        checks.delay_violations += 1;
                    }
                    if !slot.mask.is_partition() {
                        checks.mask_violations += 1;
                    }
                    // Rebuild P_{g1} u_a + P_{g2} u_{a+1} from history.
                    let older = &history[a - base];
                    let newer = if slot.mask.g2().is_empty() {
                        older
                    } else {
                        &history[a + 1 - base]
                    };
                    slot.mask.combine(older, newer, &mut rebuilt);
                    if rebuilt.iter().zip(&slot.u_hat).any(|(x, y)| x.to_bits() != y.to_bits()) {
                        checks.read_mismatches += 1;
                    }
                    let lhs = dist_sq(&slot.u_hat, &u);
                    let telescoped: f64 = step_sq.iter().skip(a - base).sum();
                    let tol = 1e-12 * telescoped + f64::MIN_POSITIVE;
                    if lhs > (m - a) as f64 * telescoped + tol * (m - a).max(1) as f64 {
                        checks.step_bound_violations += 1;
                    }
                    if lhs > 4.0 * telescoped + 4.0 * tol {
                        checks.step_bound4_violations += 1;
                    }

                    anchor.direction_into(data, slot.instance, &slot.u_hat, cfg.lambda, &mut step);
                    for (s, x) in sum.iter_mut().zip(&u) {
                        *s += x;
                    }
                    if cfg.record_steps {
                        log.steps.push(StepRecord {
                            epoch,
                            update: m,
                            worker: e.worker,
                            instance: slot.instance,
                            read_stamp: a,
                            u: u.clone(),
                            u_hat: slot.u_hat,
                            v_hat: step.clone(),
                        });
                    }
                    let before = history.back().expect("history is never empty").clone();
                    for (x, v) in u.iter_mut().zip(&step) {
                        *x += *v * -eta;
                    }
                    m += 1;
                    step_sq.push_back(dist_sq(&before, &u));
                    history.push_back(u.clone());
                    // Keep u_{m−τ} … u_m: the oldest a read can still start from.
                    while history.len() > tau + 1 {
                        history.pop_front();
                        step_sq.pop_front();
                        base += 1;
                    }
                    for other in slots.iter_mut().flatten() {
                        if let Some(mask) = other.pending_split.take() {
                            for &j in mask.g2() {
                                other.u_hat[j as usize] = u[j as usize];
                            }
                        }
                    }
                }
            }
        }
        log.epoch_ends.push(u);
        if big_m > 0 {
            let count = big_m as f64;
            w = sum.into_iter().map(|s| s / count).collect();
        }
        let objective = match model::objective_exec(exec, data, &w, cfg.lambda) {
            Ok(f) => f,
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !objective.is_finite() || objective > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                objective,
                initial,
            });
        }
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            w: w.clone(),
            objective,
        });
    }
    Ok(log)
}
