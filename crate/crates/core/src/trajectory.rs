//! Per-epoch bookkeeping shared by every solver.

use crate::error::{Error, Result};
use crate::model::{self, Dataset};
use crate::par::Exec;

/// A run is aborted once the objective exceeds this multiple of its starting value.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// What one outer epoch produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochOutcome {
    /// 1-based: the outcome after `epoch` epochs.
    pub epoch: usize,
    /// Cumulative passes over the data (full-gradient pass counts as one).
    pub effective_passes: f64,
    pub objective: f64,
    /// Updates applied during this epoch.
    pub updates: u64,
    /// Largest observed `m - read_stamp` during this epoch.
    pub max_delay: u64,
    /// Solver time for this epoch, excluding monitoring.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial_objective: f64,
    pub epochs: Vec<EpochOutcome>,
    /// `w_0, w_1, ..., w_T`.
    pub iterates: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.epochs.iter().map(|e| e.objective))
            .collect()
    }
}

/// Records epochs, checks for divergence and consults the caller's observer.
pub(crate) struct Monitor<'a, F> {
    data: &'a Dataset,
    lambda: f64,
    exec: Exec,
    observer: F,
    passes: f64,
    traj: Trajectory,
}

impl<'a, F> Monitor<'a, F>
where
    F: FnMut(&EpochOutcome, &[f64]) -> Control,
{
    pub fn new(data: &'a Dataset, lambda: f64, exec: Exec, w0: &[f64], observer: F) -> Result<Self> {
        let initial_objective = model::objective_exec(exec, data, w0, lambda)?;
        Ok(Monitor {
            data,
            lambda,
            exec,
            observer,
            passes: 0.0,
            traj: Trajectory {
                initial_objective,
                epochs: Vec::new(),
                iterates: vec![w0.to_vec()],
            },
        })
    }

    /// Records the iterate reached after an epoch. `passes` is this epoch's
    /// share of effective passes.
    pub fn record(
        &mut self,
        w: Vec<f64>,
        passes: f64,
        updates: u64,
        max_delay: u64,
        wall_seconds: f64,
    ) -> Result<Control> {
        let epoch = self.traj.epochs.len() + 1;
        let initial = self.traj.initial_objective;
        let objective = match model::objective_exec(self.exec, self.data, &w, self.lambda) {
            Ok(f) => f,
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !objective.is_finite() || objective > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                epoch,
                objective,
                initial,
            });
        }
        self.passes += passes;
        let outcome = EpochOutcome {
            epoch,
            effective_passes: self.passes,
            objective,
            updates,
            max_delay,
            wall_seconds,
        };
        let control = (self.observer)(&outcome, &w);
        self.traj.epochs.push(outcome);
        self.traj.iterates.push(w);
        Ok(control)
    }

    pub fn finish(self) -> Trajectory {
        self.traj
    }
}

/// An observer that never stops early.
pub fn run_all(_: &EpochOutcome, _: &[f64]) -> Control {
    Control::Continue
}
