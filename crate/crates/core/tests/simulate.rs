mod common;

use std::sync::Arc;

use fbsde_core::config::Problem;
use fbsde_core::fbsde::Form;
use fbsde_core::simulate::*;
use fbsde_core::solver::{solve_backward, DecouplingField};
use fbsde_core::utility::{make_kappa, KappaSpec, UtilityEvaluator};

fn solved(name: &str) -> (Problem, DecouplingField) {
    let problem = Problem::new(common::coarse(name)).unwrap();
    let (field, _) = solve_backward(&problem.coefficients, &problem.grid, &problem.config.solver).unwrap();
    (problem, field)
}

fn run(problem: &Problem, field: &DecouplingField, opts: &SimulateOptions) -> PathEnsemble {
    simulate(field, &problem.coefficients, &problem.xcheck0(), problem.x0(), opts).unwrap()
}

#[test]
fn degenerate_problem_simulates_to_exact_zeros() {
    let (problem, field) = solved("degenerate");
    let e = run(&problem, &field, &SimulateOptions::new(200, 20, 3));
    for p in &e.paths {
        assert!(p.y.iter().chain(&p.z).chain(&p.pi_star).all(|v| *v == 0.0));
        assert!(p.x.iter().all(|v| *v == 0.0));
        assert_eq!(p.terminal, 0.0);
    }
    assert_eq!(e.max_abs_z(), 0.0);
}

#[test]
fn exponential_strategy_is_merton() {
    let (problem, field) = solved("exponential");
    let e = run(&problem, &field, &SimulateOptions::new(100, 20, 9));
    // pi* = theta_1 / gamma in the traded direction, nothing in the other
    for p in &e.paths {
        for pi in p.pi_star.chunks(2) {
            assert!((pi[0] - 0.15).abs() < 1e-10, "{}", pi[0]);
            assert_eq!(pi[1], 0.0);
        }
    }
    let r = wealth_consistency(&e);
    assert!(r.max_abs < 1e-12);
}

#[test]
fn same_seed_same_paths_regardless_of_threads() {
    let (problem, field) = solved("xtilde_sine");
    let opts = SimulateOptions::new(64, 20, 42);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run(&problem, &field, &opts));
    let b = three.install(|| run(&problem, &field, &opts));
    assert_eq!(a, b);
    let c = run(&problem, &field, &SimulateOptions::new(64, 20, 43));
    assert_ne!(a.paths[0].x, c.paths[0].x);
}

#[test]
fn shifted_draws_reproduce_the_p_paths_under_b() {
    let (problem, field) = solved("xtilde_sine");
    let opts = SimulateOptions::new(50, 20, 5);
    let p = run(&problem, &field, &opts);
    let b_coeff = problem.coefficients.with_form(Form::BForm);
    let b_opts = SimulateOptions {
        increments: Increments::PDrawsShiftedToB,
        ..opts
    };
    let b = simulate(&field, &b_coeff, &problem.xcheck0(), problem.x0(), &b_opts).unwrap();
    assert_eq!(b.measure, Form::BForm);
    let mut worst = 0.0f64;
    for (pp, bp) in p.paths.iter().zip(&b.paths) {
        for (u, v) in pp.x.iter().zip(&bp.x).chain(pp.xcheck.iter().zip(&bp.xcheck)) {
            worst = worst.max((u - v).abs());
        }
    }
    assert!(worst < 1e-10, "{worst}");
    assert!(wealth_consistency(&b).max_abs < 1e-12);
}

#[test]
fn shifted_draws_need_the_b_form() {
    let (problem, field) = solved("degenerate");
    let opts = SimulateOptions {
        increments: Increments::PDrawsShiftedToB,
        ..SimulateOptions::new(4, 4, 0)
    };
    assert!(simulate(&field, &problem.coefficients, &problem.xcheck0(), 0.0, &opts).is_err());
    assert!(simulate(&field, &problem.coefficients, &[], 0.0, &SimulateOptions::new(4, 4, 0)).is_err());
    assert!(simulate(&field, &problem.coefficients, &[0.0], 0.0, &SimulateOptions::new(0, 4, 0)).is_err());
}

#[test]
fn optimal_strategy_examples() {
    let u = UtilityEvaluator::new(Arc::new(make_kappa(KappaSpec::Linear { gamma: 2.0, offset: 0.0 }).unwrap())).unwrap();
    // phi = -1/2: pi_1 = -(0.3 * -0.5 + 0.1)
    let pi = optimal_strategy(&u, &[0.3, 0.5], 1, 0.0, &[0.1, 0.2]).unwrap();
    assert!((pi[0] - 0.05).abs() < 1e-15);
    assert_eq!(pi[1], 0.0);
    let pi = optimal_strategy(&u, &[0.4, -0.2], 2, 3.0, &[0.0, 0.1]).unwrap();
    assert!((pi[0] - 0.2).abs() < 1e-15);
    assert!((pi[1] + 0.2).abs() < 1e-15);
}
