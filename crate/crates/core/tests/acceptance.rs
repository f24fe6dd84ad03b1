//! Acceptance gate: one PASS/FAIL line per criterion, each within its time limit.
//!
//! Set `ASYSVRG_REAL_DATA` to a LibSVM file (rcv1 for the shape check) to add
//! the real-data parts of criteria 8 and 10.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use asysvrg::baselines::{svrg_sequential, SvrgConfig};
use asysvrg::cli::{self, Algorithm, RunSpec, RunStatus, StepChoice, StopRule};
use asysvrg::data::{self, parse_libsvm, serialize_libsvm, SyntheticSpec, FIXTURE};
use asysvrg::engine::{IterateOption, Scheme};
use asysvrg::model::{self, Anchor, Dataset};
use asysvrg::par::Exec;
use asysvrg::reference::{self, Optimum};
use asysvrg::sim::{self, Schedule, SimConfig, ValidationOptions};
use asysvrg::theory::{self, Condition, ReadScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

// Prefix of an Ok detail whose precondition does not hold on this machine.
const SKIP: &str = "skipped: ";

struct Gate {
    cache: PathBuf,
    failed: usize,
    skipped: usize,
}

impl Gate {
    fn check(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce(&Path) -> Outcome) {
        let start = Instant::now();
        let result = f(&self.cache);
        let took = start.elapsed();
        let (tag, detail) = match result {
            Ok(d) if d.starts_with(SKIP) => ("SKIP", d[SKIP.len()..].to_string()),
            Ok(d) if took <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {took:.1?}, limit {limit:?}")),
            Err(d) => ("FAIL", d),
        };
        match tag {
            "FAIL" => self.failed += 1,
            "SKIP" => self.skipped += 1,
            _ => {}
        }
        println!("{tag} criterion {id} ({name}): {detail} [{took:.2?}]");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture() -> Dataset {
    FIXTURE.generate().unwrap()
}

fn optimum(cache: &Path, data: &Dataset, lambda: f64) -> Optimum {
    reference::load_or_solve_in(cache, data, lambda).unwrap()
}

fn gradient_fd(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let d = rng.random_range(1..=50);
        let data = data::generate_synthetic(30, d, 100 + k, 2.0).map_err(|e| e.to_string())?;
        let ex = data.example(rng.random_range(0..30));
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lambda = 0.01;
        let g = model::grad_component(ex, &w, lambda).map_err(|e| e.to_string())?;
        let f = |w: &[f64]| model::loss_component(ex, w) + 0.5 * lambda * model::norm_sq(w);
        let h = 1e-6;
        for j in 0..d {
            let (mut a, mut b) = (w.clone(), w.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            // Relative to the gradient's scale so near-zero coordinates do not
            // amplify the O(h²) truncation and rounding error.
            let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            worst = worst.max((fd - g[j]).abs() / scale);
        }
    }
    ensure(worst <= 1e-5, || format!("worst relative error {worst:.2e} > 1e-5"))?;
    Ok(format!("20 pairs, worst relative error {worst:.2e}"))
}

fn unbiasedness(_: &Path) -> Outcome {
    let data = data::generate_synthetic(200, 10, 5, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u0: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let anchor = Anchor::new(Exec::Sequential, &data, &u0, 0.01).unwrap();
        let mut mean = [0.0; 10];
        let mut dir = vec![0.0; 10];
        for i in 0..data.len() {
            anchor.direction_into(&data, i, &u, 0.01, &mut dir);
            for (m, x) in mean.iter_mut().zip(&dir) {
                *m += x;
            }
        }
        let g = model::full_gradient(&data, &u, 0.01, None).unwrap();
        for (m, gj) in mean.iter().zip(g.iter()) {
            worst = worst.max((m / data.len() as f64 - gj).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("worst deviation {worst:.2e} > 1e-12"))?;
    Ok(format!("10 pairs, worst coordinate deviation {worst:.2e}"))
}

fn tau_zero_equivalence(_: &Path) -> Outcome {
    let data = fixture();
    let w0 = vec![0.0; data.dim()];
    let lambda = 0.01;
    let eta = 0.1 / model::smoothness_constant(&data, lambda);
    let m = 2 * data.len();
    let seq = svrg_sequential(
        &data,
        &w0,
        &SvrgConfig {
            step_size: eta,
            inner_iterations: m,
            epochs: 5,
            seed: 21,
            lambda,
            option: IterateOption::AverageIterate,
        },
    )
    .map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        scheme: ReadScheme::Consistent,
        step_size: eta,
        lambda,
        epochs: 5,
        seed: 21,
        record_steps: false,
    };
    let log = sim::simulate(&data, &cfg, &Schedule::alternating(m), &w0).map_err(|e| e.to_string())?;
    for (t, (a, b)) in seq.iterates.iter().zip(&log.epochs).enumerate() {
        let same = a.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("iterate {t} differs"))?;
    }
    ensure(seq.iterates.len() == 6 && log.epochs.len() == 6, || {
        "wrong epoch count".into()
    })?;
    Ok("5 epochs bitwise identical".into())
}

fn variance_bound(cache: &Path) -> Outcome {
    let data = fixture();
    let lambda = 0.01;
    let opt = optimum(cache, &data, lambda);
    let l = model::smoothness_constant(&data, lambda);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (scheme, mixed) in [(ReadScheme::Consistent, false), (ReadScheme::Inconsistent, true)] {
        let cfg = SimConfig {
            scheme,
            step_size: 0.1 / l,
            lambda,
            epochs: 5,
            seed: 4,
            record_steps: true,
        };
        let schedule = Schedule::random_bounded(4, 3, 2 * data.len(), data.dim(), 4, mixed);
        let log = sim::simulate(&data, &cfg, &schedule, &vec![0.0; data.dim()]).map_err(|e| e.to_string())?;
        let q = sim::measure_q_sequence(Exec::default(), &data, &log, lambda).map_err(|e| e.to_string())?;
        let v = sim::check_variance_bound(Exec::default(), &data, &log, &q, lambda, opt.objective)
            .map_err(|e| e.to_string())?;
        ensure(v.violations == 0, || {
            format!("{} of {} steps violate the bound", v.violations, v.checked)
        })?;
        ensure(v.checked >= 10_000, || format!("only {} steps", v.checked))?;
        checked += v.checked;
        worst = worst.max(v.worst_ratio);
    }
    Ok(format!("{checked} steps, 0 violations, worst q/bound {worst:.3}"))
}

fn linear_convergence(cache: &Path) -> Outcome {
    let data = fixture();
    let lambda = 0.01;
    let opt = optimum(cache, &data, lambda);
    let l = model::smoothness_constant(&data, lambda);
    let m_tilde = 20.0 * data.len() as f64;
    let w0 = vec![0.0; data.dim()];
    let mut parts = Vec::new();
    for tau in [0u32, 3] {
        let cert = theory::max_certified_step(l, lambda, tau, m_tilde, ReadScheme::Consistent)
            .ok_or_else(|| format!("no certified step at τ={tau}"))?;
        let mut opts = ValidationOptions::new(lambda, opt.objective);
        opts.seeds = 20;
        opts.epochs = 50;
        let v = sim::validate_certificate(Exec::default(), &data, &cert, &opts, &w0).map_err(|e| e.to_string())?;
        ensure(v.diverged_seeds == 0, || {
            format!("τ={tau}: {} seeds diverged", v.diverged_seeds)
        })?;
        ensure(!v.ratios.is_empty(), || format!("τ={tau}: no measurable epochs"))?;
        ensure(v.worst_ratio <= cert.rate + 0.1, || {
            format!(
                "τ={tau}: mean gap ratio {:.4} > α + 0.1 = {:.4}",
                v.worst_ratio,
                cert.rate + 0.1
            )
        })?;
        let reached = v.mean_gaps.iter().position(|&g| g < 1e-10);
        let t = reached.ok_or_else(|| format!("τ={tau}: gap never below 1e-10 in 50 epochs"))?;
        parts.push(format!(
            "τ={tau}: η={:.4} α={:.4} worst ratio {:.2e}, gap<1e-10 at epoch {t}",
            cert.step_size, cert.rate, v.worst_ratio
        ));
    }
    Ok(parts.join("; "))
}

fn certificate_machinery(_: &Path) -> Outcome {
    let (mu, m, eta, l) = (0.01, 1e5, 0.01, 1.0);
    let th = theory::alpha_consistent(mu, m, eta, 0, 1.0, l);
    let classic = 1.0 / (mu * m * eta * (1.0 - 2.0 * eta * l)) + 2.0 * eta * l / (1.0 - 2.0 * eta * l);
    ensure((th.alpha - classic).abs() <= 1e-15 * classic, || {
        format!("α {} vs {classic}", th.alpha)
    })?;

    // k = 2(τ+1)ρ^{2τ}ηL = 4 · 1.21 · 0.25 > 1
    let past = theory::alpha_consistent(0.01, 1e4, 0.25, 1, 1.1, 1.0);
    ensure(past.violations.contains(&Condition::RateDenominatorNonPositive), || {
        format!("denominator boundary not named: {:?}", past.violations)
    })?;
    let c2 = theory::factor_inconsistent(0.01, 1e4, 0.6, 1e3, 1.0, 0, 1.0);
    ensure(c2.violations.contains(&Condition::C2NotBelowTwoEta), || {
        format!("c2 >= 2η not named: {:?}", c2.violations)
    })?;

    let mut worst: f64 = 0.0;
    for &(eta, l, tau) in &[
        (0.01, 1.0, 1u32),
        (0.01, 1.0, 2),
        (0.001, 1.0, 4),
        (0.02, 0.5, 3),
        (0.004, 1.0, 4),
    ] {
        let r = 1.0 / eta;
        let c = theory::c_consistent(r, eta, l);
        let lo = 1.0 / (1.0 - c);
        let grid = grid_first(lo, |x| {
            x > lo && x * (1.0 - 0.5 * c * (1.0 + x.powi(tau as i32))) >= 1.0
        });
        worst = worst.max(agreement(theory::rho_consistent(r, eta, l, tau), grid)?);

        let a = 4.0 * r * eta * eta * l * l;
        let s = 1.0 - 1.0 / r;
        let lo = (1.0 + a) / (s - a);
        let grid = grid_first(lo, |x| x * (s - a * (tau as f64 + 1.0) * x.powi(tau as i32)) > 1.0 + a);
        worst = worst.max(agreement(theory::rho_inconsistent(r, eta, l, tau), grid)?);
    }
    ensure(worst <= 1e-5, || format!("ρ differs from grid by {worst:.2e}"))?;
    Ok(format!(
        "classic rate exact, conditions named, ρ vs grid within {worst:.1e}"
    ))
}

/// Distance between a ρ search and its grid oracle; both must agree on feasibility.
fn agreement(search: Result<f64, Condition>, grid: Option<f64>) -> Result<f64, String> {
    match (search, grid) {
        (Ok(rho), Some(g)) => Ok((rho - g).abs()),
        (Err(Condition::RhoInfeasible), None) => Ok(0.0),
        (got, g) => Err(format!("ρ search {got:?} vs grid {g:?}")),
    }
}

fn grid_first(lo: f64, ok: impl Fn(f64) -> bool) -> Option<f64> {
    (0..5_000_000).map(|k| lo + 1e-6 * k as f64).find(|&x| ok(x))
}

fn live_convergence(cache: &Path) -> Outcome {
    let data = fixture();
    let lambda = 1e-4;
    let opt = optimum(cache, &data, lambda);
    let budget = 30.0;
    let stop = StopRule {
        f_star: opt.objective,
        tol: 1e-4,
        pass_budget: Some(budget),
    };
    let eta = 0.1 / model::smoothness_constant(&data, lambda);
    let mut parts = Vec::new();
    for scheme in [Scheme::LockFree, Scheme::InconsistentLock, Scheme::ConsistentLock] {
        let mut passes = Vec::new();
        for seed in 0..5 {
            let mut spec = RunSpec::new(Algorithm::Asysvrg, scheme, 4, lambda);
            spec.eta = StepChoice::Fixed(eta);
            spec.seed = seed;
            spec.epochs = 10;
            let out = cli::execute(&data, &spec, stop).map_err(|e| e.to_string())?;
            ensure(out.status == RunStatus::Converged, || {
                format!(
                    "{scheme} seed {seed}: {:?}, final gap {:?}",
                    out.status,
                    out.metrics.final_gap()
                )
            })?;
            passes.push(out.metrics.rows.last().unwrap().effective_passes);
        }
        parts.push(format!("{scheme} 5/5 (passes {:?})", passes));
    }
    Ok(format!("p=4, gap<1e-4 within {budget} passes: {}", parts.join(", ")))
}

fn tuned_final_objective(data: &Dataset, algorithm: Algorithm, lambda: f64, f_star: f64) -> Result<(f64, f64), String> {
    let budget = 30.0;
    let mut spec = RunSpec::new(algorithm, Scheme::LockFree, 4, lambda);
    spec.epochs = (budget / spec.passes_per_epoch(data.len())).ceil() as usize;
    let stop = StopRule {
        f_star,
        tol: 0.0,
        pass_budget: Some(budget),
    };
    let out = cli::execute(data, &spec, stop).map_err(|e| e.to_string())?;
    let last = out.metrics.rows.last().ok_or("no rows")?;
    ensure(matches!(out.status, RunStatus::BudgetExhausted), || {
        format!("{algorithm:?}: {:?}", out.status)
    })?;
    ensure((last.effective_passes - budget).abs() < 1e-9, || {
        format!("{algorithm:?} stopped at {} passes", last.effective_passes)
    })?;
    Ok((last.objective, out.eta))
}

fn asysvrg_vs_hogwild_ordering(cache: &Path) -> Outcome {
    let mut sets = vec![("synthetic".to_string(), fixture(), 1e-4)];
    if let Some(path) = real_data() {
        let d = data::load_libsvm(&path, None).map_err(|e| e.to_string())?;
        sets.push((path.display().to_string(), d, 1e-4));
    }
    let mut parts = Vec::new();
    for (name, data, lambda) in sets {
        let opt = optimum(cache, &data, lambda);
        let (f_asy, eta_asy) = tuned_final_objective(&data, Algorithm::Asysvrg, lambda, opt.objective)?;
        let (f_hog, eta_hog) = tuned_final_objective(&data, Algorithm::Hogwild, lambda, opt.objective)?;
        ensure(f_asy < f_hog, || {
            format!("{name}: AsySVRG {f_asy} not below Hogwild! {f_hog}")
        })?;
        parts.push(format!(
            "{name}: gap {:.2e} (η={eta_asy:.3}) vs {:.2e} (γ={eta_hog:.3})",
            f_asy - opt.objective,
            f_hog - opt.objective
        ));
    }
    Ok(format!("30 passes, {}", parts.join("; ")))
}

fn speedup(cache: &Path) -> Outcome {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let data = SyntheticSpec { n: 20_000, ..FIXTURE }.generate().unwrap();
    let lambda = 1e-4;
    let opt = optimum(cache, &data, lambda);
    let stop = StopRule {
        f_star: opt.objective,
        tol: 1e-4,
        pass_budget: None,
    };
    let eta = 0.1 / model::smoothness_constant(&data, lambda);
    let median = |p: usize| -> Result<f64, String> {
        let mut times = Vec::new();
        for seed in 0..3 {
            let mut spec = RunSpec::new(Algorithm::Asysvrg, Scheme::LockFree, p, lambda);
            spec.eta = StepChoice::Fixed(eta);
            spec.seed = seed;
            spec.epochs = 20;
            let out = cli::execute(&data, &spec, stop).map_err(|e| e.to_string())?;
            ensure(out.status == RunStatus::Converged, || {
                format!("p={p} seed {seed} did not converge")
            })?;
            times.push(out.solver_seconds);
        }
        asysvrg::metrics::median(&mut times).ok_or_else(|| "no times".into())
    };
    let t1 = median(1)?;
    let t4 = median(4)?;
    let s = t1 / t4;
    let msg = format!("{cores} cores, p=1 {t1:.3}s, p=4 {t4:.3}s, speedup {s:.2}x");
    if cores < 4 {
        // The 1.5x bound is only claimed with at least 4 cores.
        Ok(format!("{SKIP}needs >= 4 cores for the 1.5x bound, measured {msg}"))
    } else {
        ensure(s >= 1.5, || format!("{msg}, below 1.5x"))?;
        Ok(msg)
    }
}

fn random_line(rng: &mut ChaCha8Rng) -> String {
    let label = ["+1", "-1", "1", "-1.0", "1.0"][rng.random_range(0..5)];
    let mut line = label.to_string();
    let mut idx = 0u32;
    for _ in 0..rng.random_range(0..15) {
        idx += rng.random_range(1..200);
        let v: f64 = match rng.random_range(0..3) {
            0 => rng.random_range(-1.0..1.0),
            1 => rng.random_range(-1e6..1e6),
            _ => rng.random_range(-5i32..5) as f64,
        };
        line.push_str(&format!(" {idx}:{v}"));
    }
    if rng.random_bool(0.1) {
        line.push_str(" # comment");
    }
    line
}

fn parser(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for round in 0..5 {
        let lines: Vec<String> = (0..1000).map(|_| random_line(&mut rng)).collect();
        let text = lines.join("\n");
        let a = parse_libsvm(Cursor::new(text.as_bytes()), None).map_err(|e| e.to_string())?;
        ensure(a.len() == 1000, || {
            format!("round {round}: parsed {} examples", a.len())
        })?;
        let out = serialize_libsvm(&a);
        let b = parse_libsvm(Cursor::new(out.as_bytes()), Some(a.dim())).map_err(|e| e.to_string())?;
        ensure(a.examples() == b.examples() && a.dim() == b.dim(), || {
            format!("round {round}: mismatch")
        })?;
        ensure(serialize_libsvm(&b) == out, || {
            format!("round {round}: text not stable")
        })?;
    }
    let mut msg = "5 x 1000 random lines round-trip".to_string();
    match real_data() {
        Some(path) if path.to_string_lossy().contains("rcv1") => {
            let d = data::load_libsvm(&path, None).map_err(|e| e.to_string())?;
            ensure((d.len(), d.dim()) == (20242, 47236), || {
                format!("rcv1 shape ({}, {})", d.len(), d.dim())
            })?;
            msg.push_str("; rcv1 shape (20242, 47236)");
        }
        _ => msg.push_str("; rcv1 not available, shape check skipped"),
    }
    Ok(msg)
}

fn real_data() -> Option<PathBuf> {
    std::env::var_os("ASYSVRG_REAL_DATA")
        .map(PathBuf::from)
        .filter(|p| p.exists())
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a filter are accepted and ignored.
    let dir = tempfile::tempdir().unwrap();
    let mut gate = Gate {
        cache: dir.path().to_path_buf(),
        failed: 0,
        skipped: 0,
    };
    let s = Duration::from_secs;
    gate.check(1, "gradient correctness", s(1), gradient_fd);
    gate.check(2, "unbiasedness", s(1), unbiasedness);
    gate.check(3, "tau=0 oracle equivalence", s(5), tau_zero_equivalence);
    gate.check(4, "variance bound", s(30), variance_bound);
    gate.check(5, "linear convergence", s(120), linear_convergence);
    gate.check(6, "certificate machinery", s(10), certificate_machinery);
    gate.check(7, "live parallel convergence", s(60), live_convergence);
    gate.check(8, "AsySVRG below Hogwild!", s(300), asysvrg_vs_hogwild_ordering);
    gate.check(9, "lock-free speedup at p=4", s(600), speedup);
    gate.check(10, "parser", s(60), parser);
    if gate.failed == 0 {
        println!("acceptance: no failures, {} skipped", gate.skipped);
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failed);
        ExitCode::FAILURE
    }
}
