//! Reference optimum `w_*` for suboptimality gaps, with an on-disk cache.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::baselines::{svrg_sequential_observed, SvrgConfig};
use crate::data::serialize_libsvm;
use crate::engine::IterateOption;
use crate::error::{Error, Result};
use crate::model::{self, Dataset};
use crate::par::Exec;
use crate::trajectory::Control;

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "ASYSVRG_CACHE_DIR";

/// Target for `‖∇f(w)‖² / (2μ)`, which bounds `f(w) − f(w_*)`.
pub const GAP_TOLERANCE: f64 = 1e-14;

const MAX_EPOCHS: usize = 2000;
const FORMAT: &str = "asysvrg-optimum/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub w: Vec<f64>,
    pub objective: f64,
    pub grad_norm_sq: f64,
    /// `‖∇f(w)‖²/(2μ)`
    pub gap_bound: f64,
}

/// Solves with sequential SVRG (`η = 0.1/L`, `M = 2n`) until the
/// strong-convexity bound on the gap drops below [`GAP_TOLERANCE`], or no
/// further progress is made.
pub fn solve(data: &Dataset, lambda: f64) -> Result<Optimum> {
    let mu = model::strong_convexity_constant(lambda)?;
    let l = model::smoothness_constant(data, lambda);
    let cfg = SvrgConfig {
        step_size: 0.1 / l,
        inner_iterations: 2 * data.len(),
        epochs: MAX_EPOCHS,
        seed: 0x0971,
        lambda,
        option: IterateOption::CurrentIterate,
    };
    let exec = Exec::default();
    let w0 = vec![0.0; data.dim()];
    let mut best: Option<Optimum> = None;
    let mut stalled = 0;
    let mut failure = None;
    svrg_sequential_observed(data, &w0, &cfg, exec, |out, w| {
        let g = match model::full_gradient_exec(exec, data, w, lambda, None) {
            Ok(g) => g,
            Err(e) => {
                failure = Some(e);
                return Control::Stop;
            }
        };
        let gn = g.norm_sq();
        let cand = Optimum {
            w: w.to_vec(),
            objective: out.objective,
            grad_norm_sq: gn,
            gap_bound: gn / (2.0 * mu),
        };
        if best.as_ref().is_none_or(|b| cand.grad_norm_sq < b.grad_norm_sq) {
            best = Some(cand);
            stalled = 0;
        } else {
            stalled += 1;
        }
        let done = best.as_ref().is_some_and(|b| b.gap_bound <= GAP_TOLERANCE);
        // Rounding eventually stops the gradient from shrinking.
        if done || stalled >= 20 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    best.ok_or_else(|| Error::Config("reference solve ran no epochs".into()))
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("asysvrg-cache"))
}

/// Content hash of the dataset and λ.
pub fn cache_key(data: &Dataset, lambda: f64) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT.as_bytes());
    h.update(data.dim().to_le_bytes());
    h.update(lambda.to_bits().to_le_bytes());
    h.update(serialize_libsvm(data).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Optimum {
    pub fn to_text(&self) -> String {
        let mut out = format!("# {FORMAT}\n");
        writeln!(out, "objective={}", self.objective).unwrap();
        writeln!(out, "grad_norm_sq={}", self.grad_norm_sq).unwrap();
        writeln!(out, "gap_bound={}", self.gap_bound).unwrap();
        let w: Vec<String> = self.w.iter().map(f64::to_string).collect();
        writeln!(out, "w={}", w.join(" ")).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad cache line '{line}'")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| Error::Config(format!("cache entry missing '{k}'")))?
                .parse()
                .map_err(|e| Error::Config(format!("bad '{k}' in cache: {e}")))
        };
        let w = fields
            .get("w")
            .ok_or_else(|| Error::Config("cache entry missing 'w'".into()))?
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad 'w' in cache: {e}")))?;
        Ok(Optimum {
            w,
            objective: num("objective")?,
            grad_norm_sq: num("grad_norm_sq")?,
            gap_bound: num("gap_bound")?,
        })
    }
}

/// Returns the cached optimum for `(data, λ)` from `dir`, solving and
/// storing it on a miss. A cache that cannot be written only costs a re-solve.
pub fn load_or_solve_in(dir: &Path, data: &Dataset, lambda: f64) -> Result<Optimum> {
    let path = dir.join(format!("{}.opt", cache_key(data, lambda)));
    if let Ok(text) = fs::read_to_string(&path) {
        match Optimum::from_text(&text) {
            Ok(opt) if opt.w.len() == data.dim() => return Ok(opt),
            _ => eprintln!("ignoring unreadable cache entry {}", path.display()),
        }
    }
    let opt = solve(data, lambda)?;
    let write = fs::create_dir_all(dir).and_then(|_| {
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, opt.to_text())?;
        fs::rename(&tmp, &path)
    });
    if let Err(e) = write {
        eprintln!("could not cache reference optimum at {}: {e}", path.display());
    }
    Ok(opt)
}

pub fn load_or_solve(data: &Dataset, lambda: f64) -> Result<Optimum> {
    load_or_solve_in(&cache_dir(), data, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn solve_reaches_tolerance_and_caches() {
        let data = generate_synthetic(200, 5, 8, 4.0).unwrap();
        let opt = solve(&data, 0.01).unwrap();
        assert!(opt.gap_bound <= GAP_TOLERANCE, "{}", opt.gap_bound);
        let dir = tempfile::tempdir().unwrap();
        let a = load_or_solve_in(dir.path(), &data, 0.01).unwrap();
        let b = load_or_solve_in(dir.path(), &data, 0.01).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, opt);
        assert_ne!(cache_key(&data, 0.01), cache_key(&data, 0.02));
    }
}
