//! Forward Euler-Maruyama simulation of the coupled system along a solved
//! decoupling field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::fbsde::{FbsdeCoefficients, Form};
use crate::solver::DecouplingField;
use crate::utility::UtilityEvaluator;

/// How Brownian increments are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Increments {
    /// Standard normal draws for the coefficient set's own Brownian motion.
    #[default]
    Native,
    /// Draws are taken as `dW` and shifted to `dB = dW + pi_1 theta dt`
    /// before driving a B-form system.
    PDrawsShiftedToB,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulateOptions {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub increments: Increments,
    pub fp_tol: f64,
    pub fp_max: usize,
}

impl SimulateOptions {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            increments: Increments::Native,
            fp_tol: 1e-12,
            fp_max: 50,
        }
    }
}

/// One simulated path; per-step arrays hold `n_steps + 1` points and
/// increments hold `n_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    /// `(n_steps + 1) x N`, scaled factor coordinates.
    pub xcheck: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `(n_steps + 1) x d`
    pub z: Vec<f64>,
    /// `(n_steps + 1) x d`
    pub pi_star: Vec<f64>,
    /// `U'(X + Y)`
    pub marginal: Vec<f64>,
    /// `n_steps x d` increments of the Brownian motion driving the system
    /// (`W` for the P-form, `B` for the B-form).
    pub dw: Vec<f64>,
    /// `n_steps x d`, `pi_1 theta` at the start of each step.
    pub theta: Vec<f64>,
    /// Terminal condition at the end of the path.
    pub terminal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub dt: f64,
    pub measure: Form,
    pub epsilon: f64,
    pub n_steps: usize,
    pub dim_n: usize,
    pub dim_d: usize,
    pub dim_d1: usize,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    /// Largest `|Z|` over all stored points.
    pub fn max_abs_z(&self) -> f64 {
        self.paths
            .iter()
            .flat_map(|p| p.z.chunks(self.dim_d))
            .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// `pi* = -pi_1 theta phi(p) - pi_1 z`.
pub fn optimal_strategy(u: &UtilityEvaluator, theta: &[f64], d1: usize, p: f64, z: &[f64]) -> Result<Vec<f64>> {
    let phi = u.phi(p)?;
    Ok(theta
        .iter()
        .zip(z)
        .enumerate()
        .map(|(i, (th, zi))| if i < d1 { -(th * phi + zi) } else { 0.0 })
        .collect())
}

/// Resolves `z = sigma_check^T grad u + u_x vol_x(p, z)` at one point, with
/// the same relaxation as the backward solver.
#[allow(clippy::too_many_arguments)]
fn resolve_z(
    c: &FbsdeCoefficients,
    fs: &crate::fbsde::FactorState,
    p: f64,
    gx: f64,
    gc: &[f64],
    z: &mut [f64],
    fp_tol: f64,
    fp_max: usize,
) -> Result<bool> {
    let n = c.dim_n();
    let d = c.dim_d();
    let d1 = c.dim_d1();
    let gain = gx.clamp(-0.9999, 4.0);
    let a: Vec<f64> = (0..d)
        .map(|i| (0..n).map(|j| fs.vol[i * n + j] * gc[j]).sum())
        .collect();
    let mut vol_x = vec![0.0; d];
    for _ in 0..fp_max {
        c.vol_x_into(fs, p, z, &mut vol_x)?;
        let mut change = 0.0f64;
        for i in 0..d {
            let t = a[i] + gx * vol_x[i];
            let next = if i < d1 { (t + gain * z[i]) / (1.0 + gain) } else { t };
            change = change.max((next - z[i]).abs());
            z[i] = next;
        }
        if change < fp_tol {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Simulates `n_paths` paths from `(x_check0, x0)`. Path `i` draws from the
/// ChaCha stream `i` of `seed`, so results do not depend on the thread count.
pub fn simulate(
    field: &DecouplingField,
    c: &FbsdeCoefficients,
    xcheck0: &[f64],
    x0: f64,
    opts: &SimulateOptions,
) -> Result<PathEnsemble> {
    if opts.n_paths == 0 || opts.n_steps == 0 {
        return Err(FbsdeError::InvalidConfig("simulation needs at least one path and one step".into()));
    }
    if !field.is_complete() {
        return Err(FbsdeError::InvalidConfig("cannot simulate along an incomplete field".into()));
    }
    if xcheck0.len() != c.dim_n() {
        return Err(FbsdeError::InvalidConfig(format!(
            "initial factor has {} entries, expected {}",
            xcheck0.len(),
            c.dim_n()
        )));
    }
    if opts.increments == Increments::PDrawsShiftedToB && c.form != Form::BForm {
        return Err(FbsdeError::InvalidConfig("shifted increments drive the B-form only".into()));
    }
    let horizon = field.grid.horizon;
    let dt = horizon / opts.n_steps as f64;
    let paths = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(field, c, xcheck0, x0, opts, dt, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        seed: opts.seed,
        dt,
        measure: c.form,
        epsilon: c.epsilon,
        n_steps: opts.n_steps,
        dim_n: c.dim_n(),
        dim_d: c.dim_d(),
        dim_d1: c.dim_d1(),
        paths,
    })
}

fn simulate_path(
    field: &DecouplingField,
    c: &FbsdeCoefficients,
    xcheck0: &[f64],
    x0: f64,
    opts: &SimulateOptions,
    dt: f64,
    index: usize,
) -> Result<Path> {
    let n = c.dim_n();
    let d = c.dim_d();
    let d1 = c.dim_d1();
    let steps = opts.n_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let sq = dt.sqrt();

    let mut path = Path {
        xcheck: Vec::with_capacity((steps + 1) * n),
        x: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity((steps + 1) * d),
        pi_star: Vec::with_capacity((steps + 1) * d),
        marginal: Vec::with_capacity(steps + 1),
        dw: Vec::with_capacity(steps * d),
        theta: Vec::with_capacity(steps * d),
        terminal: 0.0,
    };
    let mut xc = xcheck0.to_vec();
    let mut x = x0;
    let mut z = vec![0.0; d];
    let mut vol_x = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for k in 0..=steps {
        let t = if k == steps { field.grid.horizon } else { dt * k as f64 };
        let y = field.evaluate(t, &xc, x);
        let (gx, gc) = field.gradient(t, &xc, x);
        let fs = c.factor_state(t, &xc);
        let p = x + y;
        if !resolve_z(c, &fs, p, gx, &gc, &mut z, opts.fp_tol, opts.fp_max)? {
            let mut node = xc.clone();
            node.push(x);
            return Err(FbsdeError::FixedPointFailure { t, node });
        }
        c.vol_x_into(&fs, p, &z, &mut vol_x)?;
        let marginal = c.marginal_utility(p)?;
        path.xcheck.extend_from_slice(&xc);
        path.x.push(x);
        path.y.push(y);
        path.z.extend_from_slice(&z);
        path.pi_star.extend_from_slice(&vol_x);
        path.marginal.push(marginal);
        if !(y.is_finite() && marginal.is_finite() && z.iter().all(|v| v.is_finite())) {
            return Err(FbsdeError::NonFiniteState { path: index, step: k });
        }
        if k == steps {
            break;
        }
        for v in dw.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = sq * e;
        }
        if opts.increments == Increments::PDrawsShiftedToB {
            for (v, th) in dw.iter_mut().zip(&fs.theta_traded) {
                *v += th * dt;
            }
        }
        let drift_x = c.drift_x_from_vol(&fs, &vol_x);
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut v = xc[j] + fs.drift[j] * dt;
            for i in 0..d {
                v += fs.vol[i * n + j] * dw[i];
            }
            next[j] = v;
        }
        let mut xn = x + drift_x * dt;
        for i in 0..d {
            xn += vol_x[i] * dw[i];
        }
        path.dw.extend_from_slice(&dw);
        path.theta.extend_from_slice(&fs.theta_traded);
        xc = next;
        x = xn;
        if !(x.is_finite() && xc.iter().all(|v| v.is_finite())) {
            return Err(FbsdeError::NonFiniteState { path: index, step: k + 1 });
        }
    }
    path.terminal = c.terminal(&xc, x);
    debug_assert!(path.pi_star.chunks(d).all(|p| p[d1..].iter().all(|v| *v == 0.0)));
    Ok(path)
}

/// Residual between the recorded wealth increment and the increment implied
/// by the strategy and the price dynamics `dS / S = dW + theta dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WealthResidual {
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn wealth_consistency(e: &PathEnsemble) -> WealthResidual {
    let d = e.dim_d;
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in &e.paths {
        for k in 0..e.n_steps {
            let dw = &p.dw[k * d..(k + 1) * d];
            let th = &p.theta[k * d..(k + 1) * d];
            let pi = &p.pi_star[k * d..(k + 1) * d];
            // under B the increment dB already carries theta dt
            let implied: f64 = match e.measure {
                Form::PForm => (0..d).map(|i| pi[i] * (dw[i] + th[i] * e.dt)).sum(),
                Form::BForm => (0..d).map(|i| pi[i] * dw[i]).sum(),
            };
            let r = (p.x[k + 1] - p.x[k] - implied).abs();
            max_abs = max_abs.max(r);
            sum += r;
            count += 1;
        }
    }
    WealthResidual {
        max_abs,
        mean_abs: if count == 0 { 0.0 } else { sum / count as f64 },
    }
}
