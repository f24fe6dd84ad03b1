#![allow(clippy::excessive_precision)]

use asysvrg::theory::*;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Frozen values computed with 50-digit arithmetic directly from the formulas.
const RHO_CONSISTENT_L1_ETA001_TAU2: f64 = 1.0208470088896115235;
const ALPHA_L1_MU001_ETA001_TAU2_M1E4: f64 = 1.1394079353225018687;
const C1_R10_ETAL001_TAU2_RHO11: f64 = 1.12319166142510558;
const RHO_INCONSISTENT_L1_ETA0005_R200_TAU2: f64 = 1.1069087370738613784;
const C2_L1_ETA0005_R200_TAU2: f64 = 0.00011089015136528718635;
const FACTOR_L1_MU001_ETA0005_R200_TAU2_M1E4: f64 = 2.0336400807744885077;

#[test]
fn consistent_rate_matches_extended_precision() {
    let rho = rho_consistent(100.0, 0.01, 1.0, 2).unwrap();
    assert!(rel(rho, RHO_CONSISTENT_L1_ETA001_TAU2) < 1e-13, "{rho}");
    let th = alpha_consistent(0.01, 1e4, 0.01, 2, rho, 1.0);
    assert!(rel(th.alpha, ALPHA_L1_MU001_ETA001_TAU2_M1E4) < 1e-12, "{}", th.alpha);
    // α > 1 here, so the certificate must say so.
    assert!(th.violations.contains(&Condition::RateNotContracting));
}

#[test]
fn c1_matches_extended_precision() {
    let c1 = c1_inconsistent(10.0, 0.01, 1.0, 2, 1.1).unwrap();
    assert!(rel(c1, C1_R10_ETAL001_TAU2_RHO11) < 1e-14, "{c1}");
    assert!(c1 > 1.0);
}

#[test]
fn inconsistent_factor_matches_extended_precision() {
    let rho = rho_inconsistent(200.0, 0.005, 1.0, 2).unwrap();
    assert!(rel(rho, RHO_INCONSISTENT_L1_ETA0005_R200_TAU2) < 1e-13, "{rho}");
    let th = factor_inconsistent(0.01, 1e4, 0.005, 200.0, 1.0, 2, rho);
    assert!(rel(th.c2, C2_L1_ETA0005_R200_TAU2) < 1e-12, "{}", th.c2);
    assert!(
        rel(th.factor, FACTOR_L1_MU001_ETA0005_R200_TAU2_M1E4) < 1e-12,
        "{}",
        th.factor
    );
}

#[test]
fn inconsistent_tau_zero_has_the_consistent_shape() {
    let (mu, m, eta, l, r) = (0.01, 1e9, 1e-6, 1.0, 1e5);
    let rho = rho_inconsistent(r, eta, l, 0).unwrap();
    let th = factor_inconsistent(mu, m, eta, r, l, 0, rho);
    let shape = 1.0 / (mu * m * eta) + 2.0 * l * eta / (1.0 - 2.0 * l * eta);
    assert!(rel(th.factor, shape) < 1e-4, "{} vs {shape}", th.factor);
}

/// First point of a 1e-6 grid above `lo` where `ok` holds.
fn grid_first(lo: f64, ok: impl Fn(f64) -> bool) -> Option<f64> {
    (0..5_000_000).map(|k| lo + 1e-6 * k as f64).find(|&x| ok(x))
}

#[test]
fn rho_searches_agree_with_dense_grids() {
    for &(eta, l, tau) in &[
        (0.01, 1.0, 1u32),
        (0.01, 1.0, 2),
        (0.005, 1.0, 4),
        (0.02, 0.5, 3),
        (0.001, 2.0, 6),
    ] {
        let r = 1.0 / eta;
        let c = c_consistent(r, eta, l);
        let lo = 1.0 / (1.0 - c);
        let grid = grid_first(lo, |x| {
            x > lo && x * (1.0 - 0.5 * c * (1.0 + x.powi(tau as i32))) >= 1.0
        });
        match (rho_consistent(r, eta, l, tau), grid) {
            (Ok(rho), Some(g)) => assert!((rho - g).abs() <= 1e-5, "consistent {eta} {tau}: {rho} vs {g}"),
            (Err(Condition::RhoInfeasible), None) => {}
            (got, g) => panic!("consistent {eta} {tau}: {got:?} vs grid {g:?}"),
        }

        let a = 4.0 * r * eta * eta * l * l;
        let s = 1.0 - 1.0 / r;
        let lo = (1.0 + a) / (s - a);
        let grid = grid_first(lo, |x| x * (s - a * (tau as f64 + 1.0) * x.powi(tau as i32)) > 1.0 + a);
        match (rho_inconsistent(r, eta, l, tau), grid) {
            (Ok(rho), Some(g)) => assert!((rho - g).abs() <= 1e-5, "inconsistent {eta} {tau}: {rho} vs {g}"),
            (Err(Condition::RhoInfeasible), None) => {}
            (got, g) => panic!("inconsistent {eta} {tau}: {got:?} vs grid {g:?}"),
        }
    }
}

#[test]
fn boundary_of_the_rate_denominator_is_named() {
    // With τ = 0 and ρ = 1, 1 − 2ηL hits zero at η = 1/(2L).
    let th = alpha_consistent(0.01, 1e4, 0.5, 0, 1.0, 1.0);
    assert!(th.violations.contains(&Condition::RateDenominatorNonPositive));
    let cert = certify(ReadScheme::Consistent, 1.0, 0.01, 0.6, 1, 1e4, None);
    assert!(!cert.valid);
    assert!(cert
        .violated_conditions
        .contains(&Condition::StepAboveHalfInverseSmoothness));
}

#[test]
fn c2_at_or_above_two_eta_is_named() {
    // c₂ = 4Lη²/(1 − 1/r) = 1.44/0.999 > 2η = 1.2
    let th = factor_inconsistent(0.01, 1e4, 0.6, 1e3, 1.0, 0, 1.0);
    assert!(th.c2 >= 1.2);
    assert!(th.violations.contains(&Condition::C2NotBelowTwoEta));
    assert!(th.factor.is_infinite());
}

#[test]
fn rcv1_sweep_fixture() {
    // L = 1/4 + λ for unit-norm rows, μ = λ = 1e-4, τ = 10, M̃ = 2n.
    let l = 0.25 + 1e-4;
    let m = 2.0 * 20242.0;
    assert_eq!(max_certified_step(l, 1e-4, 10, m, ReadScheme::Consistent), None);
    assert_eq!(max_certified_step(l, 1e-4, 10, m, ReadScheme::Inconsistent), None);
    // Without delay the consistent bound is reachable, right at the edge.
    let c = max_certified_step(l, 1e-4, 0, m, ReadScheme::Consistent).unwrap();
    assert_eq!(c.step_size, 0.4999999999999899);
}

#[test]
fn synthetic_sweep_fixture() {
    let pinned = [
        (ReadScheme::Consistent, 3, 0.06498958197088056),
        (ReadScheme::Consistent, 10, 0.020377999456321357),
        (ReadScheme::Inconsistent, 3, 0.06922623654122406),
        (ReadScheme::Inconsistent, 10, 0.010235899664754987),
    ];
    for (scheme, tau, eta) in pinned {
        let c = max_certified_step(0.26, 0.01, tau, 2e4, scheme).unwrap();
        assert!(
            (c.step_size - eta).abs() <= 1e-10,
            "{scheme:?} τ={tau}: {}",
            c.step_size
        );
        assert!(c.valid);
        let above = certify(scheme, 0.26, 0.01, c.step_size * (1.0 + 1e-9), tau, 2e4, None);
        assert!(!above.valid);
    }
}

fn side_conditions(c: &ConvergenceCertificate) -> Vec<Condition> {
    c.violated_conditions
        .iter()
        .copied()
        .filter(|&v| v != Condition::RateNotContracting)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Only the 1/(μM̃η) term grows as η shrinks; every other condition is
    // monotone in η.
    #[test]
    fn side_conditions_hold_below_a_certified_step(
        l in 0.1f64..4.0,
        mu_frac in 1e-4f64..0.5,
        tau in 0u32..8,
        m in 1e3f64..1e6,
        shrink in 1e-6f64..1.0,
        inconsistent in any::<bool>(),
    ) {
        let scheme = if inconsistent { ReadScheme::Inconsistent } else { ReadScheme::Consistent };
        let mu = mu_frac * l;
        if let Some(best) = max_certified_step(l, mu, tau, m, scheme) {
            prop_assert!(best.valid);
            let smaller = certify(scheme, l, mu, best.step_size * shrink, tau, m, None);
            prop_assert!(side_conditions(&smaller).is_empty(), "{}", smaller);
            prop_assert!(smaller.rho.unwrap() <= best.rho.unwrap());
        }
    }

    #[test]
    fn certificates_are_pure(
        eta in 1e-5f64..0.5,
        tau in 0u32..6,
        inconsistent in any::<bool>(),
    ) {
        let scheme = if inconsistent { ReadScheme::Inconsistent } else { ReadScheme::Consistent };
        let a = certify(scheme, 1.0, 0.01, eta, tau, 1e4, None);
        let b = certify(scheme, 1.0, 0.01, eta, tau, 1e4, None);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(ConvergenceCertificate::from_text(&a.to_text()).unwrap(), a);
    }
}
