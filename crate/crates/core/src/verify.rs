//! Executable oracles and diagnostics for solved fields and simulated paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::fbsde::{rescale_epsilon, FbsdeCoefficients, Form};
use crate::grid::{Grid, GridSpec};
use crate::market::MarketSpec;
use crate::simulate::{wealth_consistency, PathEnsemble};
use crate::solver::{solve_backward, DecouplingField, SolveOptions, SolveStatus};
use crate::utility::{KappaSpec, UtilityEvaluator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// Outcome of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub tolerance: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, tolerance: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
            tolerance,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn skipped(name: &str, why: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Skipped,
            tolerance: None,
            metrics: BTreeMap::new(),
            notes: vec![why.into()],
        }
    }

    fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

/// Structured verification output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub epsilon: f64,
    pub form: Form,
    pub field_shift: f64,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Exponential utility with constant market price of risk and constant
/// liability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub gamma: f64,
    pub theta: Vec<f64>,
    pub d1: usize,
    pub h: f64,
    pub horizon: f64,
}

/// `Y_t = h + (T - t) |pi_1 theta|^2 / (2 gamma)`, `pi* = pi_1 theta / gamma`.
pub fn exponential_oracle(o: &OracleSpec, t: f64) -> Result<(f64, Vec<f64>)> {
    if !(o.gamma > 0.0 && o.horizon > 0.0) {
        return Err(FbsdeError::InvalidConfig(format!(
            "oracle needs gamma > 0 and T > 0, got gamma = {}, T = {}",
            o.gamma, o.horizon
        )));
    }
    if !(0.0..=o.horizon).contains(&t) {
        return Err(FbsdeError::InvalidConfig(format!("t = {t} outside [0, {}]", o.horizon)));
    }
    let traded_sq: f64 = o.theta.iter().take(o.d1).map(|v| v * v).sum();
    let y = o.h + (o.horizon - t) * traded_sq / (2.0 * o.gamma);
    let pi = o
        .theta
        .iter()
        .enumerate()
        .map(|(i, th)| if i < o.d1 { th / o.gamma } else { 0.0 })
        .collect();
    Ok((y, pi))
}

/// The oracle for a problem, when it falls in the closed-form class.
pub fn oracle_for(kappa: &KappaSpec, market: &MarketSpec, horizon: f64) -> Option<OracleSpec> {
    let KappaSpec::Linear { gamma, .. } = kappa else {
        return None;
    };
    if !market.theta_is_constant() {
        return None;
    }
    let h = market.terminal_constant()?;
    let theta = market.theta(0.0, &vec![0.0; market.dim_n]);
    Some(OracleSpec {
        gamma: *gamma,
        theta,
        d1: market.dim_d1,
        h,
        horizon,
    })
}

/// Largest relative deviation of `u(0, .)` from the oracle over all nodes.
pub fn exponential_oracle_check(field: &DecouplingField, o: &OracleSpec, rel_tol: f64) -> Result<CheckResult> {
    let (y0, _) = exponential_oracle(o, 0.0)?;
    let Some(v0) = field.slice(0) else {
        return Ok(CheckResult::new("exponential_oracle", false, Some(rel_tol)).note("field does not reach t = 0"));
    };
    let scale = if y0 == 0.0 { 1.0 } else { y0.abs() };
    let mut worst = 0.0f64;
    let mut worst_idx = 0;
    for (i, v) in v0.iter().enumerate() {
        let e = (v - y0).abs() / scale;
        if !(e <= worst) {
            worst = e;
            worst_idx = i;
        }
    }
    let (xc, x) = field.grid.node(worst_idx);
    Ok(CheckResult::new("exponential_oracle", worst <= rel_tol, Some(rel_tol))
        .metric("oracle_y0", y0)
        .metric("max_rel_error", worst)
        .metric("worst_x", x)
        .note(format!("worst node x_check = {xc:?}, x = {x}")))
}

/// Upper bound `u_x <= L_{H,x} + tol` and lower bound `u_x >= floor` at every
/// retained step. The empirical margin `1 + min u_x` is reported.
pub fn gradient_bound_check(field: &DecouplingField, market: &MarketSpec, tol: f64, floor: f64) -> CheckResult {
    let upper = market.constants.lip_h_x + tol;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut at_max = (0, 0);
    let mut at_min = (0, 0);
    let mut offending = Vec::new();
    for (j, g) in field.grad_x.iter().enumerate() {
        for (i, &v) in g.iter().enumerate() {
            if v > max {
                max = v;
                at_max = (j, i);
            }
            if v < min {
                min = v;
                at_min = (j, i);
            }
            if (v > upper || v < floor) && offending.len() < 10 {
                offending.push((j, i, v));
            }
        }
    }
    let passed = max <= upper && min >= floor;
    let describe = |(j, i): (usize, usize)| {
        let (xc, x) = field.grid.node(i);
        format!("t = {}, x_check = {xc:?}, x = {x}", field.grid.time(field.first_step + j))
    };
    let mut r = CheckResult::new("gradient_bound", passed, Some(tol))
        .metric("upper_limit", upper)
        .metric("lower_limit", floor)
        .metric("max_grad_x", max)
        .metric("min_grad_x", min)
        .metric("lower_margin", 1.0 + min)
        .note(format!("max at {}", describe(at_max)))
        .note(format!("min at {}", describe(at_min)));
    for (j, i, v) in offending {
        r = r.note(format!("out of band: u_x = {v} at {}", describe((j, i))));
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub t: f64,
    pub mean: f64,
    pub std_err: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    /// `U'(x0 + Y_0)`
    pub initial: f64,
    pub ladder: Vec<LadderPoint>,
    pub max_abs_z: f64,
    /// Relative error of the stochastic-exponential reconstruction of
    /// `U'(X_T + Y_T)`, averaged over paths.
    pub reconstruction_mean_rel_error: f64,
    pub reconstruction_max_rel_error: f64,
}

fn z_score(dev: f64, se: f64) -> f64 {
    if se > 0.0 {
        dev / se
    } else if dev == 0.0 {
        0.0
    } else {
        dev.signum() * f64::INFINITY
    }
}

/// Compares sample means of `U'(X_t + Y_t)` on the ladder `t_j = j T / m`
/// against `U'(x0 + Y_0)`. At `t = T` the terminal condition replaces
/// `Y_T`. Also rebuilds `U'(X + Y)` along each path as the discrete
/// stochastic exponential of `alpha = pi_2 Z / phi - pi_1 theta`.
pub fn martingale_diagnostic(e: &PathEnsemble, u: &UtilityEvaluator, ladder_points: usize) -> Result<MartingaleReport> {
    if e.measure != Form::PForm {
        return Err(FbsdeError::InvalidConfig("the martingale diagnostic needs a P-form ensemble".into()));
    }
    if e.paths.is_empty() || ladder_points == 0 {
        return Err(FbsdeError::InvalidConfig("empty ensemble or ladder".into()));
    }
    let d = e.dim_d;
    let n = e.n_paths() as f64;
    let initial = e.paths[0].marginal[0];
    let mut ladder = Vec::with_capacity(ladder_points);
    for j in 1..=ladder_points {
        let k = (j * e.n_steps + ladder_points / 2) / ladder_points;
        // deviations from the initial value, so a constant process gives
        // exact zeros rather than summation noise
        let devs: Vec<f64> = if k == e.n_steps {
            e.paths
                .iter()
                .map(|p| u.marginal_utility(p.x[k] + p.terminal).map(|m| m - initial))
                .collect::<Result<_>>()?
        } else {
            e.paths.iter().map(|p| p.marginal[k] - initial).collect()
        };
        let dev = devs.iter().sum::<f64>() / n;
        let var = if devs.len() > 1 {
            devs.iter().map(|s| (s - dev) * (s - dev)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std_err = (var / n).sqrt();
        ladder.push(LadderPoint {
            t: e.time(k),
            mean: initial + dev,
            std_err,
            z: z_score(dev, std_err),
        });
    }
    let max_abs_z = ladder.iter().map(|l| l.z.abs()).fold(0.0, f64::max);

    let mut sum_rel = 0.0;
    let mut max_rel = 0.0f64;
    for p in &e.paths {
        let mut m = p.marginal[0];
        for k in 0..e.n_steps {
            let phi = u.phi(p.x[k] + p.y[k])?;
            let z = &p.z[k * d..(k + 1) * d];
            let th = &p.theta[k * d..(k + 1) * d];
            let dw = &p.dw[k * d..(k + 1) * d];
            let mut drift = 0.0;
            let mut mart = 0.0;
            for i in 0..d {
                let alpha = if i < e.dim_d1 { -th[i] } else { z[i] / phi };
                mart += alpha * dw[i];
                drift += alpha * alpha;
            }
            m *= (mart - 0.5 * drift * e.dt).exp();
        }
        let direct = p.marginal[e.n_steps];
        let rel = ((m - direct) / direct).abs();
        sum_rel += rel;
        max_rel = max_rel.max(rel);
    }
    Ok(MartingaleReport {
        initial,
        ladder,
        max_abs_z,
        reconstruction_mean_rel_error: sum_rel / n,
        reconstruction_max_rel_error: max_rel,
    })
}

/// Passes when every ladder `|z|` is within `z_limit` and the largest
/// per-path reconstruction error is within `reconstruction_tol`.
pub fn martingale_check(report: &MartingaleReport, z_limit: f64, reconstruction_tol: f64) -> CheckResult {
    let m = report.ladder.len();
    let passed = report.max_abs_z <= z_limit && report.reconstruction_max_rel_error <= reconstruction_tol;
    let mut r = CheckResult::new("martingale", passed, Some(z_limit))
        .metric("reconstruction_tol", reconstruction_tol)
        .metric("initial_marginal", report.initial)
        .metric("max_abs_z", report.max_abs_z)
        .metric("reconstruction_mean_rel_error", report.reconstruction_mean_rel_error)
        .metric("reconstruction_max_rel_error", report.reconstruction_max_rel_error);
    for (j, l) in report.ladder.iter().enumerate() {
        r = r.metric(&format!("z_{}", j + 1), l.z);
    }
    r.note(format!(
        "{m} ladder points at |z| <= {z_limit}; no multiple-testing correction (Bonferroni bound on the familywise level: {:.2}%)",
        100.0 * m as f64 * 0.0027
    ))
}

/// Bound `5 (dt + dx^2)` with `dx` the wealth-axis spacing.
pub fn discretization_tolerance(grid: &Grid) -> f64 {
    let dx = grid.x_axis.step();
    5.0 * (grid.dt() + dx * dx)
}

/// Solves the problem at scale `eps2` and compares `u^{eps2}(0, (eps1/eps2)
/// x_check, x)` with the field `reference` solved at `eps1`. The factor axes
/// of `spec` are in original coordinates, so the nodes of both grids map to
/// each other.
pub fn epsilon_equivalence_check(
    c: &FbsdeCoefficients,
    spec: &GridSpec,
    reference: &DecouplingField,
    eps2: f64,
    opts: &SolveOptions,
    grid_for: impl Fn(&GridSpec, &FbsdeCoefficients) -> Result<Grid>,
) -> Result<CheckResult> {
    let eps1 = reference.epsilon;
    let tol = discretization_tolerance(&reference.grid);
    let c2 = rescale_epsilon(c, eps2)?;
    let g2 = grid_for(spec, &c2)?;
    let (f2, rep2) = solve_backward(&c2, &g2, opts)?;
    if rep2.status != SolveStatus::Converged || !reference.is_complete() {
        return Ok(CheckResult::new("epsilon_equivalence", false, Some(tol))
            .note(format!("solve at epsilon = {eps2} ended with {:?}", rep2.status)));
    }
    let a = reference.slice(0).expect("complete field");
    let b = f2.slice(0).expect("complete field");
    let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // spot-check off-node agreement through interpolation
    let ratio = eps1 / eps2;
    let mut off_node = 0.0f64;
    let g1 = &reference.grid;
    for (fc, fx) in [(0.31, 0.17), (0.73, -1.41), (0.05, 2.2)] {
        let xc1: Vec<f64> = g1.xcheck_axes.iter().map(|a| a.lo + fc * (a.hi - a.lo)).collect();
        let xc2: Vec<f64> = xc1.iter().map(|v| v * ratio).collect();
        let diff = (reference.evaluate(0.0, &xc1, fx) - f2.evaluate(0.0, &xc2, fx)).abs();
        off_node = off_node.max(diff);
    }
    Ok(CheckResult::new("epsilon_equivalence", worst <= tol, Some(tol))
        .metric("epsilon_1", eps1)
        .metric("epsilon_2", eps2)
        .metric("max_node_discrepancy", worst)
        .metric("max_off_node_discrepancy", off_node))
}

/// Solves the other form of the same problem and compares `u(0, .)` with
/// `reference`. Without market price of risk the forms must agree exactly.
pub fn form_equivalence_check(
    c: &FbsdeCoefficients,
    grid: &Grid,
    reference: &DecouplingField,
    opts: &SolveOptions,
) -> Result<CheckResult> {
    let exact = c.market().theta_is_zero();
    let tol = if exact { 0.0 } else { discretization_tolerance(grid) };
    let other = c.with_form(reference.form.other());
    let (f2, rep2) = solve_backward(&other, grid, opts)?;
    if rep2.status != SolveStatus::Converged || !reference.is_complete() {
        return Ok(CheckResult::new("form_equivalence", false, Some(tol))
            .note(format!("{:?} solve ended with {:?}", other.form, rep2.status)));
    }
    let a = reference.slice(0).expect("complete field");
    let b = f2.slice(0).expect("complete field");
    let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let identical = a == b;
    let passed = if exact { identical } else { worst <= tol };
    Ok(CheckResult::new("form_equivalence", passed, Some(tol))
        .metric("max_node_difference", worst)
        .metric("bitwise_identical", if identical { 1.0 } else { 0.0 }))
}

/// Wealth increments against strategy-implied increments.
pub fn wealth_consistency_check(e: &PathEnsemble, tol: f64) -> CheckResult {
    let r = wealth_consistency(e);
    CheckResult::new("wealth_consistency", r.max_abs <= tol, Some(tol))
        .metric("max_abs_residual", r.max_abs)
        .metric("mean_abs_residual", r.mean_abs)
        .metric("max_abs_z", e.max_abs_z())
}
