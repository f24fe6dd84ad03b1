//! Measurements over simulated trajectories.

use super::{simulate, Schedule, SimConfig, TrajectoryLog};
use crate::error::{Error, Result};
use crate::model::{self, Anchor, Dataset};
use crate::par::{self, Exec};
use crate::theory::{ConvergenceCertificate, ReadScheme};

/// Exact variance terms at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QPoint {
    pub epoch: usize,
    pub update: usize,
    /// `q_m = (1/n) Σ_i ‖∇f_i(u_m) − ∇f_i(u0) + g0‖²`
    pub q: f64,
    /// The same at the read `û_m`.
    pub q_hat: f64,
}

/// Recomputes `q_m` and `q̂_m` at every logged step by enumerating all
/// instances. Steps are processed in parallel under `exec`.
pub fn measure_q_sequence(exec: Exec, data: &Dataset, log: &TrajectoryLog, lambda: f64) -> Result<Vec<QPoint>> {
    let anchors = log.epochs[..log.epochs.len().saturating_sub(1)]
        .iter()
        .map(|e| Anchor::new(exec, data, &e.w, lambda))
        .collect::<Result<Vec<_>>>()?;
    if log.steps.iter().any(|s| s.epoch >= anchors.len()) {
        return Err(Error::Config("log steps refer to an epoch without a snapshot".into()));
    }
    Ok(par::map_collect(exec, log.steps.len(), |k| {
        let s = &log.steps[k];
        let a = &anchors[s.epoch];
        QPoint {
            epoch: s.epoch,
            update: s.update,
            q: a.variance_q(Exec::Sequential, data, &s.u, lambda),
            q_hat: a.variance_q(Exec::Sequential, data, &s.u_hat, lambda),
        }
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest `q_m / bound` seen.
    pub worst_ratio: f64,
}

/// Absolute allowance on the right-hand side for objective evaluation
/// error and the precision of the reference optimum, per unit of `4L`.
pub const VARIANCE_BOUND_SLACK: f64 = 2e-12;

/// Checks `q_m ≤ 4L(f(u_m) − f* + f(u0) − f*)` at every logged step.
pub fn check_variance_bound(
    exec: Exec,
    data: &Dataset,
    log: &TrajectoryLog,
    q: &[QPoint],
    lambda: f64,
    f_star: f64,
) -> Result<VarianceCheck> {
    if q.len() != log.steps.len() {
        return Err(Error::DimensionMismatch {
            expected: log.steps.len(),
            actual: q.len(),
        });
    }
    let l = model::smoothness_constant(data, lambda);
    let f_u: Vec<Result<f64>> = par::map_collect(exec, log.steps.len(), |k| {
        model::objective_exec(Exec::Sequential, data, &log.steps[k].u, lambda)
    });
    let mut check = VarianceCheck {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for ((s, p), f) in log.steps.iter().zip(q).zip(f_u) {
        let f0 = log.epochs[s.epoch].objective;
        let bound = 4.0 * l * ((f? - f_star) + (f0 - f_star));
        check.checked += 1;
        if p.q > bound + 4.0 * l * VARIANCE_BOUND_SLACK {
            check.violations += 1;
        }
        if bound > 0.0 {
            check.worst_ratio = check.worst_ratio.max(p.q / bound);
        }
    }
    Ok(check)
}

/// First-epoch `q_m` sequences (m = 0..M̃−1), one per seed. Schedules come
/// from `make_schedule(seed)`; sampling streams are seeded by the same seed.
pub fn q_sequences<S>(
    exec: Exec,
    data: &Dataset,
    cfg: &SimConfig,
    w0: &[f64],
    seeds: &[u64],
    make_schedule: S,
) -> Result<Vec<Vec<f64>>>
where
    S: Fn(u64) -> Schedule + Sync,
{
    let runs: Vec<Result<Vec<f64>>> = par::map_collect(exec, seeds.len(), |k| {
        let seed = seeds[k];
        let cfg = SimConfig {
            epochs: 1,
            seed,
            record_steps: true,
            ..cfg.clone()
        };
        let log = simulate(data, &cfg, &make_schedule(seed), w0)?;
        let q = measure_q_sequence(Exec::Sequential, data, &log, cfg.lambda)?;
        Ok(q.into_iter().map(|p| p.q).collect())
    });
    runs.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioCheck {
    pub steps: usize,
    /// Steps where `mean(q_m) − ρ·mean(q_{m+1})` exceeds two standard errors.
    pub violations: usize,
    pub max_ratio: f64,
}

/// Tests `E q_m ≤ ρ E q_{m+1}` on Monte-Carlo means. Per seed the paired
/// difference `q_m − ρ q_{m+1}` is formed; a step fails when the mean
/// difference is positive by more than two standard errors.
pub fn q_ratio_check(per_seed: &[Vec<f64>], rho: f64) -> RatioCheck {
    let len = per_seed.iter().map(Vec::len).min().unwrap_or(0);
    let s = per_seed.len() as f64;
    let mut check = RatioCheck {
        steps: 0,
        violations: 0,
        max_ratio: 0.0,
    };
    if per_seed.len() < 2 {
        return check;
    }
    for m in 0..len.saturating_sub(1) {
        let diffs: Vec<f64> = per_seed.iter().map(|q| q[m] - rho * q[m + 1]).collect();
        let mean = diffs.iter().sum::<f64>() / s;
        let var = diffs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (s - 1.0);
        let se = (var / s).sqrt();
        check.steps += 1;
        if mean > 2.0 * se {
            check.violations += 1;
        }
        let a = per_seed.iter().map(|q| q[m]).sum::<f64>();
        let b = per_seed.iter().map(|q| q[m + 1]).sum::<f64>();
        if b > 0.0 {
            check.max_ratio = check.max_ratio.max(a / b);
        }
    }
    check
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationOptions {
    pub seeds: usize,
    pub epochs: usize,
    /// Virtual workers; defaults to τ + 1 so the bound can be reached.
    pub workers: Option<usize>,
    pub lambda: f64,
    pub f_star: f64,
    /// Epochs whose mean gap is below this are too close to the reference
    /// precision to give a meaningful ratio.
    pub gap_floor: f64,
    pub slack: f64,
}

impl ValidationOptions {
    pub fn new(lambda: f64, f_star: f64) -> Self {
        ValidationOptions {
            seeds: 20,
            epochs: 10,
            workers: None,
            lambda,
            f_star,
            gap_floor: 1e-11,
            slack: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateValidation {
    pub rate: f64,
    /// Seed-mean gap `f(w_t) − f*` for t = 0..T.
    pub mean_gaps: Vec<f64>,
    /// `mean_gap[t+1] / mean_gap[t]` for every epoch above the floor.
    pub ratios: Vec<f64>,
    pub worst_ratio: f64,
    pub diverged_seeds: usize,
    pub seeds: usize,
    pub pass: bool,
}

/// Runs `opts.seeds` simulations at the certificate's step size and delay
/// bound with random τ-bounded schedules (split reads for the inconsistent
/// scheme) and compares the worst per-epoch ratio of mean gaps with the rate.
pub fn validate_certificate(
    exec: Exec,
    data: &Dataset,
    cert: &ConvergenceCertificate,
    opts: &ValidationOptions,
    w0: &[f64],
) -> Result<CertificateValidation> {
    let tau = cert.tau as usize;
    let workers = opts.workers.unwrap_or(tau + 1);
    let updates = cert.m_tilde.round() as usize;
    let mixed = cert.scheme == ReadScheme::Inconsistent;
    let runs: Vec<Result<Option<Vec<f64>>>> = par::map_collect(exec, opts.seeds, |k| {
        let seed = k as u64;
        let schedule = Schedule::random_bounded(workers, tau, updates, data.dim(), seed, mixed);
        let cfg = SimConfig {
            scheme: cert.scheme,
            step_size: cert.step_size,
            lambda: opts.lambda,
            epochs: opts.epochs,
            seed,
            record_steps: false,
        };
        match simulate(data, &cfg, &schedule, w0) {
            Ok(log) => Ok(Some(log.objectives().into_iter().map(|f| f - opts.f_star).collect())),
            Err(Error::Diverged { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut gaps = Vec::new();
    let mut diverged = 0;
    for r in runs {
        match r? {
            Some(g) => gaps.push(g),
            None => diverged += 1,
        }
    }
    let mut mean_gaps = vec![0.0; opts.epochs + 1];
    for g in &gaps {
        for (m, x) in mean_gaps.iter_mut().zip(g) {
            *m += x;
        }
    }
    if !gaps.is_empty() {
        for m in mean_gaps.iter_mut() {
            *m /= gaps.len() as f64;
        }
    }
    let ratios: Vec<f64> = mean_gaps
        .windows(2)
        .take_while(|w| w[0] > opts.gap_floor)
        .map(|w| w[1] / w[0])
        .collect();
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(CertificateValidation {
        rate: cert.rate,
        pass: diverged == 0 && !ratios.is_empty() && worst_ratio <= cert.rate + opts.slack,
        mean_gaps,
        ratios,
        worst_ratio,
        diverged_seeds: diverged,
        seeds: opts.seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::{full_gradient, norm_sq};

    #[test]
    fn q_at_the_snapshot_is_the_squared_full_gradient() {
        let data = generate_synthetic(60, 4, 3, 4.0).unwrap();
        let cfg = SimConfig {
            scheme: ReadScheme::Consistent,
            step_size: 0.1,
            lambda: 0.01,
            epochs: 1,
            seed: 0,
            record_steps: true,
        };
        let w0 = vec![0.3, -0.2, 0.1, 0.0];
        let log = simulate(&data, &cfg, &Schedule::alternating(10), &w0).unwrap();
        let q = measure_q_sequence(Exec::default(), &data, &log, 0.01).unwrap();
        let g = full_gradient(&data, &w0, 0.01, None).unwrap();
        assert!((q[0].q - norm_sq(&g)).abs() <= 1e-15 * norm_sq(&g).max(1.0));
        assert_eq!(q[0].q, q[0].q_hat);
    }

    #[test]
    fn ratio_check_flags_growth() {
        let grow: Vec<Vec<f64>> = (0..10).map(|k| vec![1.0, 2.0 + 0.01 * k as f64, 4.0]).collect();
        assert_eq!(q_ratio_check(&grow, 1.0).violations, 0);
        let shrink: Vec<Vec<f64>> = (0..10).map(|k| vec![4.0 + 0.01 * k as f64, 2.0, 1.0]).collect();
        let c = q_ratio_check(&shrink, 1.5);
        assert_eq!(c.violations, 2);
        assert!(c.max_ratio > 1.9);
    }
}
