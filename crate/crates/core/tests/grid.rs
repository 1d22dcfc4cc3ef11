use fbsde_core::error::FbsdeError;
use fbsde_core::grid::*;

fn spec() -> GridSpec {
    GridSpec {
        horizon: 1.0,
        steps: 100,
        x: Axis {
            lo: -5.0,
            hi: 5.0,
            count: 201,
        },
        xtilde: vec![Axis {
            lo: -2.0,
            hi: 2.0,
            count: 9,
        }],
        quad_nodes: 8,
        x0: 0.0,
        xtilde0: None,
    }
}

#[test]
fn builds_the_standard_grid() {
    let g = build_grid(&spec(), 1, 2, 1.0, 0.15).unwrap();
    assert_eq!(g.len(), 9 * 201);
    assert_eq!(g.quad.len(), 64);
    let total: f64 = g.quad.weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-14);
    assert_eq!(g.time(100), 1.0);
    assert!((g.dt() - 0.01).abs() < 1e-16);
}

#[test]
fn margin_rule_rejects_narrow_wealth_axis() {
    let mut s = spec();
    s.x = Axis {
        lo: 0.0,
        hi: 0.1,
        count: 11,
    };
    assert!(matches!(
        build_grid(&s, 1, 2, 1.0, 1.0),
        Err(FbsdeError::DomainTooSmall { .. })
    ));
}

#[test]
fn rejects_bad_shapes() {
    let mut s = spec();
    s.x.count = 2;
    assert!(build_grid(&s, 1, 2, 1.0, 0.1).is_err());
    assert!(build_grid(&spec(), 4, 2, 1.0, 0.1).is_err());
    assert!(build_grid(&spec(), 2, 2, 1.0, 0.1).is_err());
    let mut s = spec();
    s.quad_nodes = 1;
    assert!(build_grid(&s, 1, 2, 1.0, 0.1).is_err());
}

#[test]
fn tensor_rule_is_antisymmetric_under_reversal() {
    let r = TensorRule::new(5, 2);
    let n = r.len();
    for q in 0..n {
        let a = r.point(q);
        let b = r.point(n - 1 - q);
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], -b[1]);
        assert_eq!(r.weights[q], r.weights[n - 1 - q]);
    }
    let cov: f64 = (0..n).map(|q| r.weights[q] * r.point(q)[0] * r.point(q)[1]).sum();
    assert!(cov.abs() < 1e-15);
}

#[test]
fn epsilon_scales_factor_axes() {
    let g = build_grid(&spec(), 1, 2, 0.5, 0.15).unwrap();
    assert_eq!(g.xcheck_axes[0].lo, -4.0);
    assert_eq!(g.xcheck_axes[0].hi, 4.0);
}

#[test]
fn interpolation_reproduces_nodes_and_linear_functions() {
    let g = build_grid(&spec(), 1, 2, 1.0, 0.15).unwrap();
    let vals: Vec<f64> = (0..g.len())
        .map(|i| {
            let (xc, x) = g.node(i);
            0.3 * x - 0.2 * xc[0] + 1.0
        })
        .collect();
    for idx in [0, 17, 400, g.len() - 1] {
        let (xc, x) = g.node(idx);
        assert_eq!(g.interpolate(&vals, &xc, x), vals[idx]);
    }
    for (xc, x) in [(0.37, 1.234), (-2.5, 5.7), (3.1, -6.0)] {
        let exact = 0.3 * x - 0.2 * xc + 1.0;
        assert!((g.interpolate(&vals, &[xc], x) - exact).abs() < 1e-12);
    }
    let dx = g.difference(&vals, 1);
    assert!(dx.iter().all(|v| (v - 0.3).abs() < 1e-12));
    let dc = g.difference(&vals, 0);
    assert!(dc.iter().all(|v| (v + 0.2).abs() < 1e-12));
}

#[test]
fn interpolation_stays_between_neighbours() {
    let g = build_grid(&spec(), 1, 2, 1.0, 0.15).unwrap();
    let vals: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64).collect();
    let (xc, x) = g.node(205);
    let h = g.x_axis.step();
    let v = g.interpolate(&vals, &xc, x + 0.3 * h);
    let (a, b) = (vals[205], vals[206]);
    assert!(v >= a.min(b) && v <= a.max(b));
}
