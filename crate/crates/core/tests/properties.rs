use fbsde_core::grid::{build_grid, Axis, GridSpec, TensorRule};
use fbsde_core::utility::{make_kappa, KappaSpec};
use proptest::prelude::*;

fn grid(lo: f64, width: f64, nx: usize, nc: usize) -> fbsde_core::grid::Grid {
    let spec = GridSpec {
        horizon: 1.0,
        steps: 2,
        x: Axis::new(lo, lo + width, nx).unwrap(),
        xtilde: vec![Axis::new(-1.0, 1.5, nc).unwrap(), Axis::new(0.0, 2.0, 3).unwrap()],
        quad_nodes: 2,
        x0: lo + 0.5 * width,
        xtilde0: None,
    };
    build_grid(&spec, 2, 2, 1.0, 0.0).unwrap()
}

proptest! {
    #[test]
    fn multilinear_interpolation_reproduces_affine_functions(
        lo in -5.0f64..5.0,
        width in 0.5f64..10.0,
        nx in 3usize..12,
        nc in 3usize..7,
        coef in prop::array::uniform4(-2.0f64..2.0),
        probe in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let g = grid(lo, width, nx, nc);
        let f = |xc: &[f64], x: f64| coef[0] + coef[1] * xc[0] + coef[2] * xc[1] + coef[3] * x;
        let values: Vec<f64> = (0..g.len()).map(|i| { let (xc, x) = g.node(i); f(&xc, x) }).collect();
        // probes reach outside the grid, where the interpolant extrapolates
        let xc = [probe[0], probe[1] + 1.0];
        let x = lo + 0.5 * width + probe[2] * width;
        let got = g.interpolate(&values, &xc, x);
        prop_assert!((got - f(&xc, x)).abs() < 1e-9 * (1.0 + f(&xc, x).abs()));
    }

    #[test]
    fn interpolation_is_exact_at_nodes(nx in 3usize..9, nc in 3usize..6, seed in any::<u64>()) {
        let g = grid(-1.0, 2.0, nx, nc);
        let values: Vec<f64> = (0..g.len()).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0).collect();
        for i in 0..g.len() {
            let (xc, x) = g.node(i);
            prop_assert_eq!(g.interpolate(&values, &xc, x), values[i]);
        }
    }

    #[test]
    fn tensor_rule_is_symmetric_with_unit_moments(m in 2usize..9, dim in 1usize..4) {
        let r = TensorRule::new(m, dim);
        prop_assert_eq!(r.len(), m.pow(dim as u32));
        let total: f64 = r.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for q in 0..r.len() {
            let a = r.point(q);
            let b = r.point(r.len() - 1 - q);
            for (u, v) in a.iter().zip(b) {
                prop_assert_eq!(*u, -*v);
            }
        }
        for i in 0..dim {
            let second: f64 = (0..r.len()).map(|q| r.weights[q] * r.point(q)[i].powi(2)).sum();
            prop_assert!((second - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_increments_are_additive_and_bracketed(
        lower in 0.2f64..2.0,
        spread in 0.0f64..3.0,
        sharpness in 0.1f64..5.0,
        center in -3.0f64..3.0,
        x in -30.0f64..30.0,
        h1 in 0.0f64..10.0,
        h2 in 0.0f64..10.0,
    ) {
        let m = make_kappa(KappaSpec::SoftplusBlend { lower, upper: lower + spread, sharpness, center }).unwrap();
        let whole = m.kappa_increment(x, h1 + h2);
        let parts = m.kappa_increment(x, h1) + m.kappa_increment(x + h1, h2);
        prop_assert!((whole - parts).abs() < 1e-9 * (1.0 + whole.abs()));
        let h = h1 + h2;
        prop_assert!(whole >= lower * h - 1e-9 && whole <= (lower + spread) * h + 1e-9);
    }

    #[test]
    fn phi_is_bracketed_by_the_risk_aversion_bounds(
        lower in 0.2f64..2.0,
        spread in 0.0f64..3.0,
        sharpness in 0.1f64..5.0,
        x in -20.0f64..20.0,
    ) {
        let upper = lower + spread;
        let m = make_kappa(KappaSpec::SoftplusBlend { lower, upper, sharpness, center: 0.0 }).unwrap();
        let phi = m.phi(x).unwrap();
        prop_assert!(phi >= -1.0 / lower * (1.0 + 1e-10) && phi <= -1.0 / upper * (1.0 - 1e-10));
    }
}
