//! Exogenous factor diffusion, market price of risk and terminal liability.
//!
//! The factor `X~` lives in `R^{1xN}` and follows
//! `dX~ = mu~(t, X~) dt + dW^T sigma~(t, X~)` with `W` a `d = d1 + d2`
//! dimensional Brownian motion; the first `d1` directions are traded. The
//! coefficients are picked from a small closed catalogue so runs stay
//! serializable and reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::report::{CheckOutcome, ValidationReport};

/// Scalar coefficient function of the factor state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Constant {
        value: f64,
    },
    /// `intercept + weights . x~`
    Affine {
        #[serde(default)]
        intercept: f64,
        weights: Vec<f64>,
    },
    /// `offset + amplitude * sin(weights . x~ + phase)`
    Sine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        weights: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn::Constant { value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarFn::Constant { value } => *value,
            ScalarFn::Affine { intercept, weights } => intercept + dot(weights, x),
            ScalarFn::Sine {
                offset,
                amplitude,
                weights,
                phase,
            } => offset + amplitude * (dot(weights, x) + phase).sin(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::Affine { weights, .. } => norm(weights),
            ScalarFn::Sine {
                amplitude, weights, ..
            } => amplitude.abs() * norm(weights),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            ScalarFn::Constant { value } => value.abs(),
            ScalarFn::Affine { intercept, weights } => {
                if weights.iter().all(|w| *w == 0.0) {
                    intercept.abs()
                } else {
                    f64::INFINITY
                }
            }
            ScalarFn::Sine {
                offset, amplitude, ..
            } => offset.abs() + amplitude.abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.lipschitz() == 0.0
    }

    fn arity(&self) -> Option<usize> {
        match self {
            ScalarFn::Constant { .. } => None,
            ScalarFn::Affine { weights, .. } | ScalarFn::Sine { weights, .. } => Some(weights.len()),
        }
    }
}

/// One additive term of the terminal liability `H~(x~, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalTerm {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * x + phase)`
    SineX {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * sin(frequency * x~[index] + phase)`
    SineXtilde {
        index: usize,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `slope * x`; unbounded, so it never passes the boundedness audit.
    LinearX {
        slope: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TerminalTerm {
    fn eval(&self, xt: &[f64], x: f64) -> f64 {
        match self {
            TerminalTerm::Constant { value } => *value,
            TerminalTerm::SineX {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).sin(),
            TerminalTerm::SineXtilde {
                index,
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * xt[*index] + phase).sin(),
            TerminalTerm::LinearX { slope } => slope * x,
        }
    }

    pub fn lip_x(&self) -> f64 {
        match self {
            TerminalTerm::SineX {
                amplitude,
                frequency,
                ..
            } => (amplitude * frequency).abs(),
            TerminalTerm::LinearX { slope } => slope.abs(),
            _ => 0.0,
        }
    }

    fn lip_xtilde(&self) -> f64 {
        match self {
            TerminalTerm::SineXtilde {
                amplitude,
                frequency,
                ..
            } => (amplitude * frequency).abs(),
            _ => 0.0,
        }
    }

    fn bound(&self) -> f64 {
        match self {
            TerminalTerm::Constant { value } => value.abs(),
            TerminalTerm::SineX { amplitude, .. } | TerminalTerm::SineXtilde { amplitude, .. } => {
                amplitude.abs()
            }
            TerminalTerm::LinearX { slope } => {
                if *slope == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Market description as written in a run configuration. Undeclared
/// constants default to the catalogue's analytic values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub d1: usize,
    #[serde(default)]
    pub d2: usize,
    /// `mu~`, one entry per factor dimension.
    pub tilde_mu: Vec<ScalarFn>,
    /// `sigma~`, `d` rows of `N` entries.
    pub tilde_sigma: Vec<Vec<ScalarFn>>,
    /// `theta~`, `d` entries.
    pub theta: Vec<ScalarFn>,
    /// Additive terms of `H~`; empty means `H~ = 0`.
    #[serde(default)]
    pub terminal: Vec<TerminalTerm>,
    /// Declared Lipschitz constant of `H~` in the wealth argument.
    pub lip_h_x: f64,
    #[serde(default)]
    pub lip_h_xtilde: Option<f64>,
    #[serde(default)]
    pub lip_theta: Option<f64>,
    #[serde(default)]
    pub lip_mu: Option<f64>,
    #[serde(default)]
    pub lip_sigma: Option<f64>,
    #[serde(default)]
    pub sup_theta: Option<f64>,
    #[serde(default)]
    pub sup_h: Option<f64>,
    #[serde(default)]
    pub sup_sigma: Option<f64>,
}

/// Declared Lipschitz constants and bounds, audited by [`validate_c2`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConstants {
    pub lip_h_x: f64,
    pub lip_h_xtilde: f64,
    pub lip_theta: f64,
    pub lip_mu: f64,
    pub lip_sigma: f64,
    pub sup_theta: f64,
    pub sup_h: f64,
    pub sup_sigma: f64,
}

/// Validated market model. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MarketSpec {
    pub dim_n: usize,
    pub dim_d1: usize,
    pub dim_d2: usize,
    tilde_mu: Vec<ScalarFn>,
    tilde_sigma: Vec<Vec<ScalarFn>>,
    theta: Vec<ScalarFn>,
    terminal: Vec<TerminalTerm>,
    pub constants: MarketConstants,
}

impl MarketSpec {
    pub fn new(cfg: MarketConfig) -> Result<Self> {
        let invalid = |msg: String| Err(FbsdeError::InvalidMarket(msg));
        let n = cfg.tilde_mu.len();
        let d = cfg.d1 + cfg.d2;
        if n == 0 {
            return invalid("tilde_mu must have at least one entry (N >= 1)".into());
        }
        if cfg.d1 == 0 {
            return invalid("need at least one traded direction (d1 >= 1)".into());
        }
        if cfg.theta.len() != d {
            return invalid(format!("theta has {} entries, expected d = {d}", cfg.theta.len()));
        }
        if cfg.tilde_sigma.len() != d || cfg.tilde_sigma.iter().any(|row| row.len() != n) {
            return invalid(format!("tilde_sigma must be {d} x {n}"));
        }
        let all_fns = cfg
            .tilde_mu
            .iter()
            .chain(cfg.theta.iter())
            .chain(cfg.tilde_sigma.iter().flatten());
        for f in all_fns {
            if let Some(k) = f.arity() {
                if k != n {
                    return invalid(format!("coefficient {f:?} has {k} weights, expected {n}"));
                }
            }
        }
        for term in &cfg.terminal {
            if let TerminalTerm::SineXtilde { index, .. } = term {
                if *index >= n {
                    return invalid(format!("terminal term refers to factor {index}, N = {n}"));
                }
            }
        }
        if !cfg.lip_h_x.is_finite() || cfg.lip_h_x < 0.0 {
            return invalid(format!("lip_h_x must be a finite non-negative number, got {}", cfg.lip_h_x));
        }

        let constants = MarketConstants {
            lip_h_x: cfg.lip_h_x,
            lip_h_xtilde: cfg
                .lip_h_xtilde
                .unwrap_or_else(|| cfg.terminal.iter().map(TerminalTerm::lip_xtilde).sum()),
            lip_theta: cfg
                .lip_theta
                .unwrap_or_else(|| norm(&cfg.theta.iter().map(ScalarFn::lipschitz).collect::<Vec<_>>())),
            lip_mu: cfg
                .lip_mu
                .unwrap_or_else(|| norm(&cfg.tilde_mu.iter().map(ScalarFn::lipschitz).collect::<Vec<_>>())),
            lip_sigma: cfg.lip_sigma.unwrap_or_else(|| {
                norm(
                    &cfg.tilde_sigma
                        .iter()
                        .flatten()
                        .map(ScalarFn::lipschitz)
                        .collect::<Vec<_>>(),
                )
            }),
            sup_theta: cfg
                .sup_theta
                .unwrap_or_else(|| norm(&cfg.theta.iter().map(ScalarFn::bound).collect::<Vec<_>>())),
            sup_h: cfg
                .sup_h
                .unwrap_or_else(|| cfg.terminal.iter().map(TerminalTerm::bound).sum()),
            sup_sigma: cfg.sup_sigma.unwrap_or_else(|| {
                norm(
                    &cfg.tilde_sigma
                        .iter()
                        .flatten()
                        .map(ScalarFn::bound)
                        .collect::<Vec<_>>(),
                )
            }),
        };
        Ok(Self {
            dim_n: n,
            dim_d1: cfg.d1,
            dim_d2: cfg.d2,
            tilde_mu: cfg.tilde_mu,
            tilde_sigma: cfg.tilde_sigma,
            theta: cfg.theta,
            terminal: cfg.terminal,
            constants,
        })
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d1 + self.dim_d2
    }

    /// True when `theta~` does not depend on the factor.
    pub fn theta_is_constant(&self) -> bool {
        self.theta.iter().all(ScalarFn::is_constant)
    }

    /// True when `theta~` vanishes identically.
    pub fn theta_is_zero(&self) -> bool {
        self.theta.iter().all(|f| f.is_constant() && f.bound() == 0.0)
    }

    /// `Some(h)` when `H~` is the constant `h`.
    pub fn terminal_constant(&self) -> Option<f64> {
        let mut total = 0.0;
        for term in &self.terminal {
            match term {
                TerminalTerm::Constant { value } => total += value,
                TerminalTerm::SineX { amplitude, .. }
                | TerminalTerm::SineXtilde { amplitude, .. }
                    if *amplitude == 0.0 => {}
                TerminalTerm::LinearX { slope } if *slope == 0.0 => {}
                _ => return None,
            }
        }
        Some(total)
    }

    pub fn tilde_mu_into(&self, _t: f64, xt: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.tilde_mu) {
            *o = f.eval(xt);
        }
    }

    pub fn tilde_mu(&self, t: f64, xt: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_n];
        self.tilde_mu_into(t, xt, &mut out);
        out
    }

    /// `sigma~` row-major, `d x N`.
    pub fn tilde_sigma_into(&self, _t: f64, xt: &[f64], out: &mut [f64]) {
        let n = self.dim_n;
        for (i, row) in self.tilde_sigma.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                out[i * n + j] = f.eval(xt);
            }
        }
    }

    pub fn tilde_sigma(&self, t: f64, xt: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_d() * self.dim_n];
        self.tilde_sigma_into(t, xt, &mut out);
        out
    }

    pub fn theta_into(&self, _t: f64, xt: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.theta) {
            *o = f.eval(xt);
        }
    }

    pub fn theta(&self, t: f64, xt: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_d()];
        self.theta_into(t, xt, &mut out);
        out
    }

    /// `H~(x~, x)`.
    pub fn terminal_h(&self, xt: &[f64], x: f64) -> f64 {
        self.terminal.iter().map(|t| t.eval(xt, x)).sum()
    }

    /// `(pi_1 theta, pi_2 theta)` at `(t, x~)`.
    pub fn split_theta(&self, t: f64, xt: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let theta = self.theta(t, xt);
        (project_traded(&theta, self.dim_d1), project_untraded(&theta, self.dim_d1))
    }
}

/// `pi_1`: zero the last `d - d1` components.
pub fn project_traded(v: &[f64], d1: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, x)| if i < d1 { *x } else { 0.0 })
        .collect()
}

/// `pi_2`: zero the first `d1` components.
pub fn project_untraded(v: &[f64], d1: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, x)| if i < d1 { 0.0 } else { *x })
        .collect()
}

const PROBE_BOX: f64 = 10.0;
const NEAR_SCALE: f64 = 1e-3;

fn within(observed: f64, limit: f64) -> bool {
    observed <= limit * (1.0 + 1e-8) + 1e-8
}

/// Audits the market conditions on `probes` random pairs.
///
/// Half the pairs are independent draws from `[-10, 10]^N`, half are
/// perturbations at distance ~1e-3, so both global and local slopes are seen.
pub fn validate_c2(spec: &MarketSpec, probes: usize, seed: u64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let c = spec.constants;
    report.push(CheckOutcome::new("L_{H,x} < 1", c.lip_h_x < 1.0, c.lip_h_x, 1.0));
    if probes == 0 {
        report.push(CheckOutcome::new("probe count >= 1", false, 0.0, 1.0));
        return report;
    }

    let n = spec.dim_n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_pair = |k: usize| -> (Vec<f64>, Vec<f64>, f64, f64) {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-PROBE_BOX..PROBE_BOX)).collect();
        let x = rng.random_range(-PROBE_BOX..PROBE_BOX);
        if k % 2 == 0 {
            let v = (0..n).map(|_| rng.random_range(-PROBE_BOX..PROBE_BOX)).collect();
            (u, v, x, rng.random_range(-PROBE_BOX..PROBE_BOX))
        } else {
            let v = u
                .iter()
                .map(|ui| {
                    let e: f64 = rng.sample(StandardNormal);
                    ui + NEAR_SCALE * e
                })
                .collect();
            let e: f64 = rng.sample(StandardNormal);
            (u, v, x, x + NEAR_SCALE * e)
        }
    };

    struct Worst {
        value: f64,
        at: Vec<f64>,
    }
    impl Worst {
        fn new() -> Self {
            Worst {
                value: 0.0,
                at: Vec::new(),
            }
        }
        fn offer(&mut self, value: f64, at: impl FnOnce() -> Vec<f64>) {
            if value > self.value || value.is_nan() {
                self.value = value;
                self.at = at();
            }
        }
    }
    let mut lip_theta = Worst::new();
    let mut lip_mu = Worst::new();
    let mut lip_sigma = Worst::new();
    let mut lip_hx = Worst::new();
    let mut lip_hxt = Worst::new();
    let mut sup_theta = Worst::new();
    let mut sup_sigma = Worst::new();
    let mut sup_h = Worst::new();

    let diff_norm = |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    for k in 0..probes {
        let (u, v, x, y) = draw_pair(k);
        let dist = diff_norm(&u, &v);
        let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).cloned().collect::<Vec<f64>>();
        let (tu, tv) = (spec.theta(0.0, &u), spec.theta(0.0, &v));
        let (mu_u, mu_v) = (spec.tilde_mu(0.0, &u), spec.tilde_mu(0.0, &v));
        let (su, sv) = (spec.tilde_sigma(0.0, &u), spec.tilde_sigma(0.0, &v));
        if dist > 0.0 {
            lip_theta.offer(diff_norm(&tu, &tv) / dist, || cat(&u, &v));
            lip_mu.offer(diff_norm(&mu_u, &mu_v) / dist, || cat(&u, &v));
            lip_sigma.offer(diff_norm(&su, &sv) / dist, || cat(&u, &v));
            let dh = (spec.terminal_h(&u, x) - spec.terminal_h(&v, x)).abs();
            lip_hxt.offer(dh / dist, || cat(&u, &v));
        }
        if x != y {
            let dh = (spec.terminal_h(&u, x) - spec.terminal_h(&u, y)).abs();
            lip_hx.offer(dh / (x - y).abs(), || cat(&u, &[x, y]));
        }
        sup_theta.offer(norm(&tu), || u.clone());
        sup_sigma.offer(norm(&su), || u.clone());
        sup_h.offer(spec.terminal_h(&u, x).abs(), || cat(&u, &[x]));
    }
    let mu0 = spec.tilde_mu(0.0, &vec![0.0; n]);

    let mut entry = |name: &str, w: Worst, limit: f64| {
        report.push(CheckOutcome::new(name, within(w.value, limit), w.value, limit).at(w.at));
    };
    entry("theta Lipschitz", lip_theta, c.lip_theta);
    entry("theta bounded", sup_theta, c.sup_theta);
    entry("mu Lipschitz", lip_mu, c.lip_mu);
    entry("sigma Lipschitz", lip_sigma, c.lip_sigma);
    entry("sigma bounded", sup_sigma, c.sup_sigma);
    entry("H Lipschitz in x", lip_hx, c.lip_h_x);
    entry("H Lipschitz in xtilde", lip_hxt, c.lip_h_xtilde);
    entry("H bounded", sup_h, c.sup_h);
    let mu0n = norm(&mu0);
    report.push(CheckOutcome::new("mu(t, 0) finite", mu0n.is_finite(), mu0n, f64::INFINITY));
    for (name, value) in [
        ("theta bound declared finite", c.sup_theta),
        ("H bound declared finite", c.sup_h),
        ("sigma bound declared finite", c.sup_sigma),
    ] {
        report.push(CheckOutcome::new(name, value.is_finite(), value, f64::INFINITY));
    }
    report
}
