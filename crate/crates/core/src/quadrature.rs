//! Gauss rules used by the utility kernel (Legendre, for the marginal-utility
//! integrals) and by the backward solver (Hermite, for conditional
//! expectations over Brownian increments).

use std::f64::consts::PI;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX: usize = 100;

/// Nodes and weights of an `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 1..=half {
        let mut z = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z_old = z;
            z = z_old - p1 / pp;
            if (z - z_old).abs() <= NEWTON_TOL {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        nodes[i - 1] = -z;
        nodes[n - i] = z;
        weights[i - 1] = w;
        weights[n - i] = w;
    }
    if n % 2 == 1 {
        nodes[half - 1] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Hermite rule for expectations under the standard normal law.
///
/// Nodes are scaled by `sqrt(2)` and weights normalized so that
/// `sum_i w_i g(x_i) ~ E[g(N(0, 1))]`. The rule is exactly symmetric:
/// node `n - 1 - i` is the negation of node `i` with the same weight.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    // pi^(-1/4)
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z_old = z;
            z = z_old - p1 / pp;
            if (z - z_old).abs() <= NEWTON_TOL {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }
    let total: f64 = w.iter().sum();
    let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().rev().map(|v| v / total).collect();
    (nodes, weights)
}

/// Adaptive composite Gauss-Legendre integration of `f` over `[a, b]`.
///
/// The interval is split into `initial_panels` equal panels; each panel is
/// bisected until the one-panel and two-half-panel estimates agree to
/// `tol * width / (b - a)`, or to roundoff of the panel value. Returns `Err(nodes_used)` once more than
/// `budget` integrand evaluations would be needed.
pub fn integrate_adaptive<F>(
    f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    tol: f64,
    budget: usize,
) -> Result<f64, usize>
where
    F: Fn(f64) -> f64,
{
    thread_local! {
        static RULE: (Vec<f64>, Vec<f64>) = gauss_legendre(10);
    }
    RULE.with(|(nodes, weights)| {
        let panel = |lo: f64, hi: f64| -> f64 {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum::<f64>()
                * half
        };
        let width = b - a;
        let mut used = 0usize;
        let mut total = 0.0;
        let mut stack: Vec<(f64, f64, f64)> = Vec::new();
        let n0 = initial_panels.max(1);
        for k in (0..n0).rev() {
            let lo = a + width * k as f64 / n0 as f64;
            let hi = a + width * (k + 1) as f64 / n0 as f64;
            used += nodes.len();
            stack.push((lo, hi, panel(lo, hi)));
        }
        while let Some((lo, hi, whole)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            used += 2 * nodes.len();
            if used > budget {
                return Err(used);
            }
            let left = panel(lo, mid);
            let right = panel(mid, hi);
            let refined = left + right;
            // never ask for more than the roundoff of the panel value
            let allowed = (tol * (hi - lo) / width).max(8.0 * f64::EPSILON * refined.abs());
            if (refined - whole).abs() <= allowed || hi - lo < 1e-12 * width {
                total += refined;
            } else {
                stack.push((mid, hi, right));
                stack.push((lo, mid, left));
            }
        }
        Ok(total)
    })
}
