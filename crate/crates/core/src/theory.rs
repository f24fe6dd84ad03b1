//! Convergence constants and rate certificates for the two locked schemes.
//!
//! Every function here is pure. Validity is reported, never asserted: an
//! invalid certificate carries the list of conditions it failed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Upper end of the ρ search.
pub const RHO_MAX: f64 = 1e6;

/// Smallest step `max_certified_step` will consider.
pub const ETA_FLOOR: f64 = 1e-15;

/// Which read contract the certificate covers. The lock-free scheme has no
/// certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReadScheme {
    Consistent,
    Inconsistent,
}

impl fmt::Display for ReadScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadScheme::Consistent => "consistent",
            ReadScheme::Inconsistent => "inconsistent",
        })
    }
}

impl FromStr for ReadScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consistent" | "consistent-lock" => Ok(ReadScheme::Consistent),
            "inconsistent" | "inconsistent-lock" | "lock" => Ok(ReadScheme::Inconsistent),
            "lock-free" | "lockfree" | "unlock" => Err(Error::Config(
                "no convergence certificate exists for the lock-free scheme".into(),
            )),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

/// A named condition a certificate can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// Some input is non-positive or not finite.
    InvalidInput,
    /// `c = 2 max{1/r, rη²L²}` is outside (0, 1).
    COutsideUnitInterval,
    /// No ρ ≤ ρ_max satisfies the ρ conditions.
    RhoInfeasible,
    /// `2Lη > 1`.
    StepAboveHalfInverseSmoothness,
    /// `1 − 2(τ+1)ρ^{2τ}ηL ≤ 0`.
    RateDenominatorNonPositive,
    /// α (or the inconsistent-read factor) is not below one.
    RateNotContracting,
    /// `r ≤ 1`.
    RNotAboveOne,
    /// `1 − 1/r − 4rη²L² ≤ 0`.
    BaseDenominatorNonPositive,
    /// `1 − 1/r − 4rτρ^τη²L² ≤ 0`.
    C1DenominatorNonPositive,
    /// `c₂ ≥ 2η`.
    C2NotBelowTwoEta,
}

impl Condition {
    pub const ALL: [Condition; 10] = [
        Condition::InvalidInput,
        Condition::COutsideUnitInterval,
        Condition::RhoInfeasible,
        Condition::StepAboveHalfInverseSmoothness,
        Condition::RateDenominatorNonPositive,
        Condition::RateNotContracting,
        Condition::RNotAboveOne,
        Condition::BaseDenominatorNonPositive,
        Condition::C1DenominatorNonPositive,
        Condition::C2NotBelowTwoEta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::InvalidInput => "invalid_input",
            Condition::COutsideUnitInterval => "c_outside_unit_interval",
            Condition::RhoInfeasible => "rho_infeasible",
            Condition::StepAboveHalfInverseSmoothness => "step_above_half_inverse_smoothness",
            Condition::RateDenominatorNonPositive => "rate_denominator_non_positive",
            Condition::RateNotContracting => "rate_not_contracting",
            Condition::RNotAboveOne => "r_not_above_one",
            Condition::BaseDenominatorNonPositive => "base_denominator_non_positive",
            Condition::C1DenominatorNonPositive => "c1_denominator_non_positive",
            Condition::C2NotBelowTwoEta => "c2_not_below_two_eta",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition '{s}'")))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// `c = 2 max{1/r, rη²L²}`.
pub fn c_consistent(r: f64, eta: f64, l: f64) -> f64 {
    2.0 * f64::max(1.0 / r, r * eta * eta * l * l)
}

/// Bisects a continuous `g` on `[lo, hi]` with `g(lo)` infeasible and `g(hi)`
/// feasible, down to adjacent floats. Returns the feasible end.
fn bisect(mut lo: f64, mut hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..2000 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest ρ with `ρ > 1/(1−c)` and `ρ(1 − c(1+ρ^τ)/2) ≥ 1`, or the
/// condition that rules it out.
pub fn rho_consistent(r: f64, eta: f64, l: f64, tau: u32) -> std::result::Result<f64, Condition> {
    if !(positive(r) && positive(eta) && positive(l)) {
        return Err(Condition::InvalidInput);
    }
    let c = c_consistent(r, eta, l);
    if !(c > 0.0 && c < 1.0) {
        return Err(Condition::COutsideUnitInterval);
    }
    let rho0 = 1.0 / (1.0 - c);
    if tau == 0 {
        return Ok(rho0);
    }
    let t = tau as i32;
    let h = |rho: f64| rho * (1.0 - 0.5 * c * (1.0 + rho.powi(t)));
    // h is concave on ρ > 0 with its peak at ρ*.
    let peak = (2.0 * (1.0 - 0.5 * c) / (c * (tau as f64 + 1.0))).powf(1.0 / tau as f64);
    let top = peak.min(RHO_MAX);
    if top <= rho0 || h(top) < 1.0 {
        return Err(Condition::RhoInfeasible);
    }
    if h(rho0) >= 1.0 {
        // Only reachable through rounding; the strict lower bound still applies.
        return Ok(rho0.next_up());
    }
    Ok(bisect(rho0, top, |rho| h(rho) >= 1.0))
}

/// Smallest ρ with `ρ ≥ (1+a)/(1−1/r−a)` and `ρ(1 − 1/r − a(τ+1)ρ^τ) > 1+a`,
/// where `a = 4rη²L²`.
pub fn rho_inconsistent(r: f64, eta: f64, l: f64, tau: u32) -> std::result::Result<f64, Condition> {
    if !(positive(r) && positive(eta) && positive(l)) {
        return Err(Condition::InvalidInput);
    }
    if r <= 1.0 {
        return Err(Condition::RNotAboveOne);
    }
    let a = 4.0 * r * eta * eta * l * l;
    let s = 1.0 - 1.0 / r;
    let b = s - a;
    if b <= 0.0 {
        return Err(Condition::BaseDenominatorNonPositive);
    }
    let rho0 = (1.0 + a) / b;
    let g = |rho: f64| rho * (s - a * (tau as f64 + 1.0) * rho.powi(tau as i32)) > 1.0 + a;
    if tau == 0 {
        let mut rho = rho0;
        while !g(rho) {
            rho = rho.next_up();
        }
        return Ok(rho);
    }
    let tp1 = tau as f64 + 1.0;
    let peak = (s / (a * tp1 * tp1)).powf(1.0 / tau as f64);
    let top = peak.min(RHO_MAX);
    if top <= rho0 || !g(top) {
        return Err(Condition::RhoInfeasible);
    }
    if g(rho0) {
        return Ok(rho0);
    }
    Ok(bisect(rho0, top, g))
}

/// `c₁ = 1/(1 − 1/r − 4rτρ^τη²L²)`.
pub fn c1_inconsistent(r: f64, eta: f64, l: f64, tau: u32, rho: f64) -> std::result::Result<f64, Condition> {
    let den = c1_denominator(r, eta, l, tau, rho);
    if den > 0.0 {
        Ok(1.0 / den)
    } else {
        Err(Condition::C1DenominatorNonPositive)
    }
}

fn c1_denominator(r: f64, eta: f64, l: f64, tau: u32, rho: f64) -> f64 {
    1.0 - 1.0 / r - 4.0 * r * tau as f64 * rho.powi(tau as i32) * eta * eta * l * l
}

/// The consistent-read rate and the quantity `k = 2(τ+1)ρ^{2τ}ηL` it hinges on.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistentRate {
    pub k: f64,
    /// +∞ when `1 − k ≤ 0`.
    pub alpha: f64,
    pub violations: Vec<Condition>,
}

pub fn alpha_consistent(mu: f64, m_tilde: f64, eta: f64, tau: u32, rho: f64, l: f64) -> ConsistentRate {
    let mut violations = Vec::new();
    if !(positive(mu) && positive(m_tilde) && positive(eta) && positive(l) && rho >= 1.0 && rho.is_finite()) {
        violations.push(Condition::InvalidInput);
    }
    let k = 2.0 * (tau as f64 + 1.0) * rho.powi(2 * tau as i32) * eta * l;
    let alpha = if 1.0 - k > 0.0 {
        1.0 / (mu * m_tilde * eta * (1.0 - k)) + k / (1.0 - k)
    } else {
        violations.push(Condition::RateDenominatorNonPositive);
        f64::INFINITY
    };
    if alpha >= 1.0 || alpha.is_nan() {
        violations.push(Condition::RateNotContracting);
    }
    if 2.0 * l * eta > 1.0 {
        violations.push(Condition::StepAboveHalfInverseSmoothness);
    }
    ConsistentRate { k, alpha, violations }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InconsistentRate {
    /// +∞ when the c₁ denominator is not positive.
    pub c2: f64,
    /// +∞ when `c₂ ≥ 2η`.
    pub factor: f64,
    pub violations: Vec<Condition>,
}

pub fn factor_inconsistent(mu: f64, m_tilde: f64, eta: f64, r: f64, l: f64, tau: u32, rho: f64) -> InconsistentRate {
    let mut violations = Vec::new();
    if !(positive(mu) && positive(m_tilde) && positive(eta) && positive(r) && positive(l) && positive(rho)) {
        violations.push(Condition::InvalidInput);
    }
    let den = c1_denominator(r, eta, l, tau, rho);
    let c2 = if den > 0.0 {
        let t = tau as f64;
        (4.0 * l * eta * eta + 16.0 * t * rho.powi(tau as i32) * l * l * eta * eta * eta) / den
    } else {
        violations.push(Condition::C1DenominatorNonPositive);
        f64::INFINITY
    };
    let gap = 2.0 * eta - c2;
    let factor = if gap > 0.0 {
        2.0 / (mu * m_tilde * gap) + c2 / gap
    } else {
        violations.push(Condition::C2NotBelowTwoEta);
        f64::INFINITY
    };
    if factor >= 1.0 || factor.is_nan() {
        violations.push(Condition::RateNotContracting);
    }
    InconsistentRate { c2, factor, violations }
}

/// Everything needed to judge one parameter choice.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceCertificate {
    pub scheme: ReadScheme,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub step_size: f64,
    pub tau: u32,
    /// M̃, updates per epoch.
    pub m_tilde: f64,
    pub r: f64,
    /// Consistent reads only.
    pub c: Option<f64>,
    pub rho: Option<f64>,
    /// Inconsistent reads only.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// α or the inconsistent-read factor; +∞ when undefined.
    pub rate: f64,
    pub valid: bool,
    pub violated_conditions: Vec<Condition>,
}

/// Builds the certificate for `(L, μ, η, τ, M̃)` with `r = 1/η` unless given.
pub fn certify(
    scheme: ReadScheme,
    l: f64,
    mu: f64,
    eta: f64,
    tau: u32,
    m_tilde: f64,
    r: Option<f64>,
) -> ConvergenceCertificate {
    let r = r.unwrap_or(1.0 / eta);
    let mut cert = ConvergenceCertificate {
        scheme,
        smoothness: l,
        strong_convexity: mu,
        step_size: eta,
        tau,
        m_tilde,
        r,
        c: None,
        rho: None,
        c1: None,
        c2: None,
        rate: f64::INFINITY,
        valid: false,
        violated_conditions: Vec::new(),
    };
    let mut violations = Vec::new();
    if !(positive(l) && positive(mu) && positive(eta) && positive(m_tilde) && positive(r)) {
        violations.push(Condition::InvalidInput);
    }
    match scheme {
        ReadScheme::Consistent => {
            cert.c = Some(c_consistent(r, eta, l));
            match rho_consistent(r, eta, l, tau) {
                Ok(rho) => {
                    cert.rho = Some(rho);
                    let th = alpha_consistent(mu, m_tilde, eta, tau, rho, l);
                    cert.rate = th.alpha;
                    violations.extend(th.violations);
                }
                Err(cond) => {
                    violations.push(cond);
                    if 2.0 * l * eta > 1.0 {
                        violations.push(Condition::StepAboveHalfInverseSmoothness);
                    }
                    violations.push(Condition::RateNotContracting);
                }
            }
        }
        ReadScheme::Inconsistent => match rho_inconsistent(r, eta, l, tau) {
            Ok(rho) => {
                cert.rho = Some(rho);
                match c1_inconsistent(r, eta, l, tau, rho) {
                    Ok(c1) => cert.c1 = Some(c1),
                    Err(cond) => violations.push(cond),
                }
                let th = factor_inconsistent(mu, m_tilde, eta, r, l, tau, rho);
                cert.c2 = th.c2.is_finite().then_some(th.c2);
                cert.rate = th.factor;
                violations.extend(th.violations);
            }
            Err(cond) => {
                violations.push(cond);
                violations.push(Condition::RateNotContracting);
            }
        },
    }
    violations.sort();
    violations.dedup();
    cert.valid = violations.is_empty();
    cert.violated_conditions = violations;
    cert
}

/// The largest step whose certificate (with `r = 1/η`) is valid.
///
/// Validity is not monotone in η: the `1/(μM̃η)` term rules out tiny steps
/// as surely as the side conditions rule out large ones. The search scans a
/// geometric grid downward from `1/(2L)` to [`ETA_FLOOR`], keeps the largest
/// valid grid point and bisects toward its invalid neighbour above. Returns
/// `None` if no grid point is valid.
pub fn max_certified_step(
    l: f64,
    mu: f64,
    tau: u32,
    m_tilde: f64,
    scheme: ReadScheme,
) -> Option<ConvergenceCertificate> {
    if !(positive(l) && positive(mu) && positive(m_tilde)) {
        return None;
    }
    let ok = |eta: f64| certify(scheme, l, mu, eta, tau, m_tilde, None).valid;
    let ratio = 2f64.powf(-1.0 / 8.0);
    let top = 0.5 / l;
    let mut above = top;
    let mut found = None;
    for k in 0.. {
        let eta = top * ratio.powi(k);
        if eta < ETA_FLOOR {
            break;
        }
        if ok(eta) {
            found = Some(eta);
            break;
        }
        above = eta;
    }
    let lo = found?;
    let best = if lo == top {
        top
    } else {
        // `lo` valid, `above` invalid.
        let mut lo = lo;
        let mut hi = above;
        while hi - lo > 1e-12 * hi {
            let mid = lo + 0.5 * (hi - lo);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Some(certify(scheme, l, mu, best, tau, m_tilde, None))
}

impl ConvergenceCertificate {
    /// Flat `key=value` lines. Absent quantities are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("scheme", self.scheme.to_string());
        put("L", self.smoothness.to_string());
        put("mu", self.strong_convexity.to_string());
        put("eta", self.step_size.to_string());
        put("tau", self.tau.to_string());
        put("m_tilde", self.m_tilde.to_string());
        put("r", self.r.to_string());
        for (k, v) in [("c", self.c), ("rho", self.rho), ("c1", self.c1), ("c2", self.c2)] {
            if let Some(v) = v {
                put(k, v.to_string());
            }
        }
        put("rate", self.rate.to_string());
        put("valid", self.valid.to_string());
        let names: Vec<&str> = self.violated_conditions.iter().map(|c| c.name()).collect();
        put("violated", names.join(","));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Config(format!("certificate is missing '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value for '{k}': {e}")))
        };
        let opt = |k: &str| -> Result<Option<f64>> {
            match map.get(k) {
                Some(_) => num(k).map(Some),
                None => Ok(None),
            }
        };
        let violated_conditions = get("violated")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Condition>>>()?;
        Ok(ConvergenceCertificate {
            scheme: get("scheme")?.parse()?,
            smoothness: num("L")?,
            strong_convexity: num("mu")?,
            step_size: num("eta")?,
            tau: get("tau")?
                .parse()
                .map_err(|e| Error::Config(format!("bad tau: {e}")))?,
            m_tilde: num("m_tilde")?,
            r: num("r")?,
            c: opt("c")?,
            rho: opt("rho")?,
            c1: opt("c1")?,
            c2: opt("c2")?,
            rate: num("rate")?,
            valid: get("valid")?
                .parse()
                .map_err(|e| Error::Config(format!("bad valid flag: {e}")))?,
            violated_conditions,
        })
    }
}

impl fmt::Display for ConvergenceCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
