//! Backward induction for the Markovian decoupling field.
//!
//! At each step the pair `(y, z)` at a node solves
//!
//! ```text
//! z = E[u_{k+1}(X_check', X') xi] / sqrt(dt)
//! y = E[u_{k+1}(X_check', X')] - f(t_k, x_check, x + y, z) dt
//! ```
//!
//! where `X' = x + drift_x dt + vol_x(y, z) . dW` is driven by the same `z`.
//! Expectations use a tensor Gauss-Hermite rule, and the next slice is read
//! through multilinear interpolation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::fbsde::{FactorState, FbsdeCoefficients, Form};
use crate::grid::{FactorStencil, Grid, MAX_FACTOR_DIM};

/// Fixed-point and monitoring tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Convergence threshold on `max(|dz|, |dy|)` between iterates.
    pub fp_tol: f64,
    /// Iterations allowed per node before reporting a failure.
    pub fp_max: usize,
    /// The solve stops once `max |u_x|` reaches `1 - delta_sing`.
    pub delta_sing: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            fp_tol: 1e-10,
            fp_max: 50,
            delta_sing: 0.01,
        }
    }
}

/// Range of the relaxation gain, an estimate of `-dT/dz` for the
/// fixed-point target `T(z)`.
const GAIN_FLOOR: f64 = -0.9999;
const GAIN_CEIL: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    SingularityDetected { t: f64, lip: f64 },
    FixedPointFailure { t: f64, node: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// `iterations[i]` counts node solves that took `i` iterations.
    pub iterations: Vec<u64>,
    pub median_iterations: usize,
    pub max_iterations: usize,
    /// Largest `|u_x|` over retained steps.
    pub max_lip_x: f64,
    /// Largest `|grad_{x~} u|` over retained steps, in original coordinates.
    pub max_lip_xtilde: f64,
    pub min_grad_x: f64,
    pub max_grad_x: f64,
    /// Time steps computed by the backward sweep.
    pub steps_computed: usize,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Values and gradient estimates of `u` on every retained time step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingField {
    pub grid: Grid,
    pub epsilon: f64,
    pub form: Form,
    /// Earliest retained step; `0` for a complete solve.
    pub first_step: usize,
    /// `values[k - first_step]` holds the nodes of step `k`.
    pub values: Vec<Vec<f64>>,
    pub grad_x: Vec<Vec<f64>>,
    /// `grad_xcheck[k - first_step][j]`: derivative along factor axis `j`,
    /// in scaled coordinates.
    pub grad_xcheck: Vec<Vec<Vec<f64>>>,
    /// `max |u_x|` per retained step.
    pub lip_history: Vec<f64>,
}

/// Gradient estimates of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grad_x: Vec<f64>,
    pub grad_xcheck: Vec<Vec<f64>>,
    pub max_abs_x: f64,
}

/// Central differences inside, one-sided at the boundary.
pub fn estimate_gradient(grid: &Grid, values: &[f64]) -> Gradients {
    let n = grid.dim_n();
    let grad_x = grid.difference(values, n);
    let grad_xcheck = (0..n).map(|j| grid.difference(values, j)).collect();
    let max_abs_x = grad_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Gradients {
        grad_x,
        grad_xcheck,
        max_abs_x,
    }
}

impl DecouplingField {
    /// Builds a field from stored values, recomputing gradients.
    pub fn from_values(
        grid: Grid,
        epsilon: f64,
        form: Form,
        first_step: usize,
        values: Vec<Vec<f64>>,
    ) -> Self {
        let mut field = DecouplingField {
            grid,
            epsilon,
            form,
            first_step,
            values: Vec::new(),
            grad_x: Vec::new(),
            grad_xcheck: Vec::new(),
            lip_history: Vec::new(),
        };
        for v in values {
            field.push_slice(v, false);
        }
        field
    }

    fn push_slice(&mut self, values: Vec<f64>, front: bool) -> f64 {
        let g = estimate_gradient(&self.grid, &values);
        let lip = g.max_abs_x;
        if front {
            self.values.insert(0, values);
            self.grad_x.insert(0, g.grad_x);
            self.grad_xcheck.insert(0, g.grad_xcheck);
            self.lip_history.insert(0, lip);
        } else {
            self.values.push(values);
            self.grad_x.push(g.grad_x);
            self.grad_xcheck.push(g.grad_xcheck);
            self.lip_history.push(lip);
        }
        lip
    }

    pub fn is_complete(&self) -> bool {
        self.first_step == 0
    }

    /// Node values of absolute step `k`, if retained.
    pub fn slice(&self, k: usize) -> Option<&[f64]> {
        k.checked_sub(self.first_step)
            .and_then(|j| self.values.get(j))
            .map(|v| v.as_slice())
    }

    pub fn max_lip(&self) -> f64 {
        self.lip_history.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// The same field shifted by a constant at every step.
    pub fn shifted(&self, delta: f64) -> DecouplingField {
        let mut out = self.clone();
        for v in out.values.iter_mut().flatten() {
            *v += delta;
        }
        out
    }

    /// Retained step bracket of `t` and the linear weight of the later step.
    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let dt = self.grid.dt();
        let mut s = t / dt;
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            s = r;
        }
        let lo = self.first_step as f64;
        let hi = self.grid.steps as f64;
        let s = s.clamp(lo, hi);
        let k = (s.floor() as usize).min(self.grid.steps);
        let w = s - k as f64;
        (k - self.first_step, w)
    }

    fn blend_in_time<F: Fn(usize) -> f64>(&self, t: f64, at: F) -> f64 {
        let (j, w) = self.time_bracket(t);
        if w == 0.0 {
            at(j)
        } else {
            (1.0 - w) * at(j) + w * at(j + 1)
        }
    }

    /// `u(t, x_check, x)`: multilinear in space, linear in time.
    pub fn evaluate(&self, t: f64, xcheck: &[f64], x: f64) -> f64 {
        self.blend_in_time(t, |j| self.grid.interpolate(&self.values[j], xcheck, x))
    }

    /// Interpolated `(u_x, grad_{x_check} u)` at an arbitrary point.
    pub fn gradient(&self, t: f64, xcheck: &[f64], x: f64) -> (f64, Vec<f64>) {
        let gx = self.blend_in_time(t, |j| self.grid.interpolate(&self.grad_x[j], xcheck, x));
        let gc = (0..self.grid.dim_n())
            .map(|a| self.blend_in_time(t, |j| self.grid.interpolate(&self.grad_xcheck[j][a], xcheck, x)))
            .collect();
        (gx, gc)
    }
}

/// `u(t, x_check, x)` for a solved field.
pub fn evaluate_field(field: &DecouplingField, t: f64, xcheck: &[f64], x: f64) -> f64 {
    field.evaluate(t, xcheck, x)
}

struct NodeSolution {
    y: f64,
    z: Vec<f64>,
    iterations: usize,
    converged: bool,
}

struct StepContext<'a> {
    c: &'a FbsdeCoefficients,
    grid: &'a Grid,
    next: &'a [f64],
    next_grad_x: &'a [f64],
    dt: f64,
    opts: &'a SolveOptions,
}

impl StepContext<'_> {
    /// Factor-side stencils of the next-step points reached from `xcheck`
    /// along each quadrature point. They do not depend on wealth or on the
    /// fixed-point iterate.
    fn factor_stencils(&self, fs: &FactorState, xcheck: &[f64]) -> Vec<FactorStencil> {
        let rule = &self.grid.quad;
        let n = xcheck.len();
        let d = rule.dim;
        let sq = self.dt.sqrt();
        let mut xc_next = [0.0f64; MAX_FACTOR_DIM];
        (0..rule.len())
            .map(|q| {
                let xi = rule.point(q);
                for j in 0..n {
                    let mut v = xcheck[j] + fs.drift[j] * self.dt;
                    for i in 0..d {
                        v += fs.vol[i * n + j] * sq * xi[i];
                    }
                    xc_next[j] = v;
                }
                self.grid.locate_factor(&xc_next[..n])
            })
            .collect()
    }

    /// `E[u']` for the current iterate. Fills `e1` with `E[u' xi] / sqrt(dt)`
    /// and `gains` with `E[u_x' xi_i^2]`, the sensitivity of `e1_i` to the
    /// traded wealth volatility.
    #[allow(clippy::too_many_arguments)]
    fn expectations(
        &self,
        stencils: &[FactorStencil],
        x: f64,
        vol_x: &[f64],
        drift_x: f64,
        u_buf: &mut [f64],
        e1: &mut [f64],
        gains: &mut [f64],
    ) -> f64 {
        let rule = &self.grid.quad;
        let d = rule.dim;
        let sq = self.dt.sqrt();
        gains.iter_mut().for_each(|g| *g = 0.0);
        for (q, u) in u_buf.iter_mut().enumerate() {
            let xi = rule.point(q);
            let mut xn = x + drift_x * self.dt;
            for i in 0..d {
                xn += vol_x[i] * sq * xi[i];
            }
            let (v, ux) = self.grid.interpolate_pair_at(self.next, self.next_grad_x, &stencils[q], xn);
            *u = v;
            let w = rule.weights[q];
            for (g, s) in gains.iter_mut().zip(xi) {
                *g += w * ux * s * s;
            }
        }
        let e0: f64 = u_buf.iter().zip(&rule.weights).map(|(u, w)| w * u).sum();
        // Pair each point with its reflection so a symmetric integrand gives
        // an exactly zero first moment.
        let len = u_buf.len();
        for (i, e) in e1.iter_mut().enumerate() {
            let mut acc = 0.0;
            for q in 0..len / 2 {
                acc += rule.weights[q] * rule.point(q)[i] * (u_buf[q] - u_buf[len - 1 - q]);
            }
            *e = acc / sq;
        }
        e0
    }

    fn solve_node(
        &self,
        idx: usize,
        fs: &FactorState,
        stencils: &[FactorStencil],
        z_seed: &[f64],
    ) -> Result<NodeSolution> {
        let x = self.grid.x_axis.node(idx % self.grid.x_axis.count);
        let d = self.c.dim_d();
        let d1 = self.c.dim_d1();
        let mut y = self.next[idx];
        let mut z = z_seed.to_vec();
        let mut vol_x = vec![0.0; d];
        let mut e1 = vec![0.0; d];
        let mut z_new = vec![0.0; d];
        let mut gains = vec![0.0; d1];
        let mut u_buf = vec![0.0; self.grid.quad.len()];
        let dt = self.dt;
        for it in 1..=self.opts.fp_max {
            let p = x + y;
            self.c.vol_x_into(fs, p, &z, &mut vol_x)?;
            let drift_x = self.c.drift_x_from_vol(fs, &vol_x);
            let e0 = self.expectations(stencils, x, &vol_x, drift_x, &mut u_buf, &mut e1, &mut gains);
            for i in 0..d {
                z_new[i] = if i < d1 {
                    let gain = gains[i].clamp(GAIN_FLOOR, GAIN_CEIL);
                    (e1[i] + gain * z[i]) / (1.0 + gain)
                } else {
                    e1[i]
                };
            }
            // one Newton step on y - e0 + f(x + y, z) dt = 0, then a plain
            // fixed-point pass
            let f = self.c.driver_at(fs, x + y, &z_new)?;
            let h = 1e-6 * (1.0 + (x + y).abs());
            let fp = (self.c.driver_at(fs, x + y + h, &z_new)? - self.c.driver_at(fs, x + y - h, &z_new)?)
                / (2.0 * h);
            let residual = y - e0 + f * dt;
            let y_newton = y - residual / (1.0 + fp * dt);
            let y_new = e0 - self.c.driver_at(fs, x + y_newton, &z_new)? * dt;
            let change = z
                .iter()
                .zip(&z_new)
                .map(|(a, b)| (a - b).abs())
                .fold((y_new - y).abs(), f64::max);
            y = y_new;
            z.copy_from_slice(&z_new);
            if !(y.is_finite() && z.iter().all(|v| v.is_finite())) {
                return Ok(NodeSolution {
                    y,
                    z,
                    iterations: it,
                    converged: false,
                });
            }
            if change < self.opts.fp_tol {
                return Ok(NodeSolution {
                    y,
                    z,
                    iterations: it,
                    converged: true,
                });
            }
        }
        Ok(NodeSolution {
            y,
            z,
            iterations: self.opts.fp_max,
            converged: false,
        })
    }
}

/// Runs the backward sweep from the terminal slice.
///
/// Node-level failures and singularities are reported through
/// [`SolveReport::status`]; the returned field then holds only the steps
/// computed before the stop.
pub fn solve_backward(
    c: &FbsdeCoefficients,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<(DecouplingField, SolveReport)> {
    let started = Instant::now();
    if grid.dim_n() != c.dim_n() || grid.brownian_dim != c.dim_d() {
        return Err(FbsdeError::InvalidGrid(format!(
            "grid has {} factor axes and {} Brownian directions, problem needs {} and {}",
            grid.dim_n(),
            grid.brownian_dim,
            c.dim_n(),
            c.dim_d()
        )));
    }
    if !(opts.fp_tol > 0.0 && opts.fp_max >= 1 && opts.delta_sing > 0.0 && opts.delta_sing < 1.0) {
        return Err(FbsdeError::InvalidConfig(format!("invalid solver options {opts:?}")));
    }
    let big_k = grid.steps;
    let n_nodes = grid.len();
    let nx = grid.x_axis.count;
    let d = c.dim_d();
    let dt = grid.dt();

    let terminal: Vec<f64> = (0..n_nodes)
        .map(|idx| {
            let (xc, x) = grid.node(idx);
            c.terminal(&xc, x)
        })
        .collect();
    let mut field = DecouplingField {
        grid: grid.clone(),
        epsilon: c.epsilon,
        form: c.form,
        first_step: big_k,
        values: Vec::new(),
        grad_x: Vec::new(),
        grad_xcheck: Vec::new(),
        lip_history: Vec::new(),
    };
    field.push_slice(terminal, true);
    let mut min_grad = field.grad_x[0].iter().copied().fold(f64::INFINITY, f64::min);
    let mut max_grad = field.grad_x[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut max_lip_xtilde = max_xcheck_norm(&field.grad_xcheck[0]) / c.epsilon;

    let mut hist = vec![0u64; opts.fp_max + 1];
    let mut z_prev = vec![0.0; n_nodes * d];
    let mut status = SolveStatus::Converged;
    let mut steps_computed = 0;

    for k in (0..big_k).rev() {
        let t = grid.time(k);
        let ctx = StepContext {
            c,
            grid,
            next: &field.values[0],
            next_grad_x: &field.grad_x[0],
            dt,
            opts,
        };
        let factors: Vec<(FactorState, Vec<FactorStencil>)> = (0..grid.factor_len())
            .into_par_iter()
            .map(|f| {
                let (xc, _) = grid.node(f * nx);
                let fs = c.factor_state(t, &xc);
                let st = ctx.factor_stencils(&fs, &xc);
                (fs, st)
            })
            .collect();
        let solved: Vec<NodeSolution> = (0..n_nodes)
            .into_par_iter()
            .with_min_len(64)
            .map(|idx| {
                let (fs, st) = &factors[idx / nx];
                ctx.solve_node(idx, fs, st, &z_prev[idx * d..(idx + 1) * d])
            })
            .collect::<Result<_>>()?;
        steps_computed += 1;
        let mut values = Vec::with_capacity(n_nodes);
        let mut failed = None;
        for (idx, s) in solved.iter().enumerate() {
            hist[s.iterations] += 1;
            if !s.converged && failed.is_none() {
                failed = Some(idx);
            }
            values.push(s.y);
            z_prev[idx * d..(idx + 1) * d].copy_from_slice(&s.z);
        }
        if let Some(idx) = failed {
            let (xc, x) = grid.node(idx);
            let mut node = xc;
            node.push(x);
            status = SolveStatus::FixedPointFailure { t, node };
            break;
        }
        let g = estimate_gradient(grid, &values);
        if g.max_abs_x >= 1.0 - opts.delta_sing {
            status = SolveStatus::SingularityDetected { t, lip: g.max_abs_x };
            break;
        }
        min_grad = g.grad_x.iter().copied().fold(min_grad, f64::min);
        max_grad = g.grad_x.iter().copied().fold(max_grad, f64::max);
        max_lip_xtilde = max_lip_xtilde.max(max_xcheck_norm(&g.grad_xcheck) / c.epsilon);
        field.values.insert(0, values);
        field.grad_x.insert(0, g.grad_x);
        field.grad_xcheck.insert(0, g.grad_xcheck);
        field.lip_history.insert(0, g.max_abs_x);
        field.first_step = k;
    }

    let total: u64 = hist.iter().sum();
    let mut median = 0;
    let mut seen = 0;
    for (i, &h) in hist.iter().enumerate() {
        seen += h;
        if 2 * seen >= total && total > 0 {
            median = i;
            break;
        }
    }
    let max_iterations = hist.iter().rposition(|&h| h > 0).unwrap_or(0);
    let report = SolveReport {
        status,
        iterations: hist,
        median_iterations: median,
        max_iterations,
        max_lip_x: field.max_lip(),
        max_lip_xtilde,
        min_grad_x: min_grad,
        max_grad_x: max_grad,
        steps_computed,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((field, report))
}

fn max_xcheck_norm(grads: &[Vec<f64>]) -> f64 {
    if grads.is_empty() {
        return 0.0;
    }
    (0..grads[0].len())
        .map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Turns a stopped solve into the corresponding error.
pub fn into_converged(result: (DecouplingField, SolveReport)) -> Result<(DecouplingField, SolveReport)> {
    match &result.1.status {
        SolveStatus::Converged => Ok(result),
        SolveStatus::SingularityDetected { t, lip } => Err(FbsdeError::SingularityDetected { t: *t, lip: *lip }),
        SolveStatus::FixedPointFailure { t, node } => Err(FbsdeError::FixedPointFailure {
            t: *t,
            node: node.clone(),
        }),
    }
}
