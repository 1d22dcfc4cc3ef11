use std::sync::Arc;

use fbsde_core::error::FbsdeError;
use fbsde_core::utility::*;

fn blend() -> KappaModel {
    make_kappa(KappaSpec::SoftplusBlend {
        lower: 1.0,
        upper: 2.0,
        sharpness: 1.0,
        center: 0.0,
    })
    .unwrap()
}

/// Brute-force trapezoid rule on `[x, x + span]` with `n` intervals.
fn trapezoid_phi(model: &KappaModel, x: f64, span: f64, n: usize) -> f64 {
    let h = span / n as f64;
    let kx = model.kappa(x);
    let f = |y: f64| (kx - model.kappa(y)).exp();
    let mut sum = 0.5 * (f(x) + f(x + span));
    for i in 1..n {
        sum += f(x + h * i as f64);
    }
    -sum * h
}

#[test]
fn linear_family_is_exponential_utility() {
    let m = make_kappa(KappaSpec::Linear {
        gamma: 2.0,
        offset: -(2.0f64).ln(),
    })
    .unwrap();
    assert_eq!(m.kappa_prime(3.7), 2.0);
    assert_eq!(m.kappa_second(-1.0), 0.0);
    assert!((m.kappa(1.0) - (2.0 - 2.0f64.ln())).abs() < 1e-15);
    assert_eq!(m.phi(5.0).unwrap(), -0.5);
    // U'(p) = exp(-2p)
    assert!((m.marginal_utility(0.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((m.marginal_utility(0.7).unwrap() - (-1.4f64).exp()).abs() < 1e-15);
}

#[test]
fn invalid_parameters_are_rejected() {
    for spec in [
        KappaSpec::Linear {
            gamma: -1.0,
            offset: 0.0,
        },
        KappaSpec::Linear {
            gamma: 0.0,
            offset: 0.0,
        },
        KappaSpec::SoftplusBlend {
            lower: 0.0,
            upper: 1.0,
            sharpness: 1.0,
            center: 0.0,
        },
        KappaSpec::SoftplusBlend {
            lower: 2.0,
            upper: 1.0,
            sharpness: 1.0,
            center: 0.0,
        },
        KappaSpec::Tabulated {
            knots: vec![0.0, 1.0],
            risk_aversion: vec![-1.0, 1.0],
            offset: 0.0,
        },
        KappaSpec::Tabulated {
            knots: vec![1.0, 0.0],
            risk_aversion: vec![1.0, 1.0],
            offset: 0.0,
        },
    ] {
        assert!(matches!(make_kappa(spec), Err(FbsdeError::InvalidFamilyParams(_))));
    }
}

#[test]
fn softplus_blend_derivatives_match_finite_differences() {
    let m = blend();
    for i in -10..=10 {
        let x = i as f64;
        let expected = 1.0 + 1.0 / (1.0 + (-x).exp());
        assert!((m.kappa_prime(x) - expected).abs() < 1e-14);
        assert!(m.kappa_prime(x) > 1.0 && m.kappa_prime(x) < 2.0);
        assert!(m.kappa_second(x) > 0.0);
        let h = 1e-5;
        let fd1 = (m.kappa(x + h) - m.kappa(x - h)) / (2.0 * h);
        assert!((fd1 - m.kappa_prime(x)).abs() < 1e-8);
        let fd2 = (m.kappa_prime(x + h) - m.kappa_prime(x - h)) / (2.0 * h);
        assert!((fd2 - m.kappa_second(x)).abs() < 1e-8);
    }
}

#[test]
fn validation_passes_for_regular_families() {
    let probe = probe_grid(-20.0, 20.0, 401);
    let lin = make_kappa(KappaSpec::Linear {
        gamma: 2.0,
        offset: 0.0,
    })
    .unwrap();
    assert!(validate_c1(&lin, &probe).passed());
    let report = validate_c1(&blend(), &probe);
    assert!(report.passed(), "{report}");
    let lo = report.check("kappa' >= declared inf").unwrap().observed;
    let hi = report.check("kappa' <= declared sup").unwrap().observed;
    assert!(lo > 1.0 && hi < 2.0);
}

#[test]
fn tabulated_with_decreasing_risk_aversion_fails_convexity() {
    let m = make_kappa(KappaSpec::Tabulated {
        knots: vec![-1.0, 0.0, 1.0, 2.0],
        risk_aversion: vec![1.0, 1.5, 1.4, 2.0],
        offset: 0.0,
    })
    .unwrap();
    let report = validate_c1(&m, &probe_grid(-3.0, 3.0, 601));
    let check = report.check("kappa'' >= 0").unwrap();
    assert!(!check.passed);
    assert!(check.observed < -0.1);
    assert!(check.worst_at[0] > 0.0 && check.worst_at[0] < 1.0);
    // evaluation clamps
    assert_eq!(m.kappa_second(0.5), 0.0);
}

#[test]
fn tabulated_interpolant_is_consistent() {
    let m = make_kappa(KappaSpec::Tabulated {
        knots: vec![-2.0, 0.0, 1.0, 3.0],
        risk_aversion: vec![1.0, 1.2, 1.8, 2.0],
        offset: 0.3,
    })
    .unwrap();
    assert!(validate_c1(&m, &probe_grid(-5.0, 5.0, 1001)).passed());
    assert_eq!(m.kappa_prime_inf, 1.0);
    assert_eq!(m.kappa_prime_sup, 2.0);
    assert!((m.kappa(-2.0) - 0.3).abs() < 1e-15);
    let h = 1e-5;
    for i in -40..=40 {
        let x = i as f64 * 0.1 + 0.0123;
        let fd = (m.kappa(x + h) - m.kappa(x - h)) / (2.0 * h);
        assert!((fd - m.kappa_prime(x)).abs() < 1e-8, "x={x}");
        let fd2 = (m.kappa_prime(x + h) - m.kappa_prime(x - h)) / (2.0 * h);
        assert!((fd2 - m.kappa_second_raw(x)).abs() < 1e-6, "x={x}");
        assert!(m.kappa_second_raw(x) <= m.kappa_second_sup + 1e-12);
    }
}

#[test]
fn phi_lies_between_exponential_bounds() {
    let m = blend();
    for i in -30..=30 {
        let x = i as f64 * 0.5;
        let phi = m.phi(x).unwrap();
        assert!((-1.0..=-0.5).contains(&phi), "phi({x}) = {phi}");
    }
    let phi0 = m.phi(0.0).unwrap();
    assert!(phi0 > -1.0 && phi0 < -0.5);
}

#[test]
fn phi_matches_trapezoid_oracle() {
    let m = blend();
    let quad = m.phi(0.0).unwrap();
    let oracle = trapezoid_phi(&m, 0.0, 40.0, 1_000_000);
    assert!(((quad - oracle) / oracle).abs() < 1e-8, "{quad} vs {oracle}");
}

#[test]
fn quotients_for_linear_family() {
    let m = make_kappa(KappaSpec::Linear {
        gamma: 2.0,
        offset: 0.0,
    })
    .unwrap();
    let q = m.quotients(0.0).unwrap();
    assert_eq!(q.phi, -0.5);
    assert_eq!(q.neg_kappa_prime, -2.0);
    assert_eq!(q.drift_coeff, -0.25);
    assert_eq!(q.phi * q.inv_phi, 1.0);
    for p in [-7.0, 0.3, 12.0] {
        assert_eq!(m.quotients(p).unwrap(), q);
    }
}

#[test]
fn quotient_monotonicity_by_finite_differences() {
    let m = blend();
    let h = 1e-4;
    let tol = 1e-6 * m.kappa_second_sup.max(1.0);
    for i in -60..=60 {
        let p = i as f64 * 0.25;
        let up = m.quotients(p + h).unwrap();
        let dn = m.quotients(p - h).unwrap();
        let d_drift = (up.drift_coeff - dn.drift_coeff) / (2.0 * h);
        let d_neg = (up.neg_kappa_prime - dn.neg_kappa_prime) / (2.0 * h);
        assert!(d_drift >= -tol, "drift_coeff' = {d_drift} at {p}");
        assert!(d_neg <= tol, "(-kappa')' = {d_neg} at {p}");
        // closed form of the derivative: (1 + kappa' phi)^2 + phi^2 kappa'' / 2
        let q = m.quotients(p).unwrap();
        let kp = m.kappa_prime(p);
        let closed = (1.0 + kp * q.phi).powi(2) + 0.5 * q.phi * q.phi * m.kappa_second(p);
        assert!((d_drift - closed).abs() < 1e-6, "{d_drift} vs {closed} at {p}");
    }
}

#[test]
fn marginal_utility_is_decreasing_and_consistent() {
    let m = blend();
    assert!(m.marginal_utility(1.0).unwrap() < m.marginal_utility(0.0).unwrap());
    for i in 0..100 {
        let p = -5.0 + 0.1 * i as f64 + 0.013;
        let lhs = m.phi(p).unwrap() * m.second_derivative(p);
        let rhs = m.marginal_utility(p).unwrap();
        assert!(((lhs - rhs) / rhs).abs() < 1e-14);
        assert!(rhs > 0.0);
    }
}

#[test]
fn evaluator_table_tracks_direct_quadrature() {
    let m = Arc::new(blend());
    let ev = UtilityEvaluator::new(m.clone()).unwrap();
    for i in 0..400 {
        let p = -45.0 + 0.2251 * i as f64;
        let direct = m.phi(p).unwrap();
        let fast = ev.phi(p).unwrap();
        assert!((direct - fast).abs() < 1e-9, "p={p}: {direct} vs {fast}");
    }
}
