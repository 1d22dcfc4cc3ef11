//! Utility functions on the real line given through their curvature profile.
//!
//! A utility is described by a function `kappa` with `U'' = -exp(-kappa)`,
//! `0 < inf kappa' <= sup kappa' < inf` and `0 <= kappa'' <= sup kappa''`.
//! `kappa'` is the local absolute risk aversion. Everything the FBSDE needs
//! is expressed through `kappa'` and the risk-tolerance quotient
//! `phi = U'/U'' = -int_x^inf exp(-(kappa(y) - kappa(x))) dy`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::quadrature::integrate_adaptive;
use crate::report::{CheckOutcome, ValidationReport};

/// Absolute tail bound for the truncated marginal-utility integrals.
pub const TAIL_TOL: f64 = 1e-12;
/// Absolute accuracy requested from the adaptive quadrature.
const QUAD_TOL: f64 = 1e-14;
/// Integrand evaluations allowed per quadrature call.
pub const QUAD_BUDGET: usize = 400_000;

/// Parameters of a curvature family, as written in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaSpec {
    /// `kappa(x) = gamma * x + offset`: exponential utility.
    Linear {
        gamma: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `kappa'(x) = lower + (upper - lower) * logistic(sharpness * (x - center))`.
    SoftplusBlend {
        lower: f64,
        upper: f64,
        sharpness: f64,
        #[serde(default)]
        center: f64,
    },
    /// `kappa'` given at knots, joined by a monotone cubic with flat ends and
    /// held constant outside the knot range. `offset` is `kappa(knots[0])`.
    Tabulated {
        knots: Vec<f64>,
        risk_aversion: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
}

/// Piecewise cubic Hermite interpolant of `kappa'` with Fritsch-Carlson slopes.
#[derive(Clone, Debug)]
struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
    /// `kappa(xs[i]) - kappa(xs[0])`
    cumulative: Vec<f64>,
}

impl MonotoneCubic {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]))
            .collect();
        let mut ms = vec![0.0; n];
        for k in 1..n - 1 {
            if secants[k - 1] * secants[k] > 0.0 {
                ms[k] = 0.5 * (secants[k - 1] + secants[k]);
            }
        }
        for (k, &delta) in secants.iter().enumerate() {
            if delta == 0.0 {
                ms[k] = 0.0;
                ms[k + 1] = 0.0;
                continue;
            }
            let alpha = ms[k] / delta;
            let beta = ms[k + 1] / delta;
            let r = alpha * alpha + beta * beta;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                ms[k] = tau * alpha * delta;
                ms[k + 1] = tau * beta * delta;
            }
        }
        let mut cumulative = vec![0.0; n];
        for k in 0..n - 1 {
            let h = xs[k + 1] - xs[k];
            cumulative[k + 1] =
                cumulative[k] + h * (ys[k] + ys[k + 1]) / 2.0 + h * h * (ms[k] - ms[k + 1]) / 12.0;
        }
        Self {
            xs,
            ys,
            ms,
            cumulative,
        }
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&k| k <= x);
        k.saturating_sub(1).min(self.xs.len() - 2)
    }

    fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[k]
            + (t3 - 2.0 * t2 + t) * h * self.ms[k]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[k + 1]
            + (t3 - t2) * h * self.ms[k + 1]
    }

    fn derivative(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] || x >= self.xs[n - 1] {
            return 0.0;
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * (self.ys[k] - self.ys[k + 1])) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.ms[k]
            + (3.0 * t2 - 2.0 * t) * self.ms[k + 1]
    }

    fn integral(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.cumulative[n - 1] + self.ys[n - 1] * (x - self.xs[n - 1]);
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
        self.cumulative[k]
            + h * ((t4 / 2.0 - t3 + t) * self.ys[k]
                + h * (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * self.ms[k]
                + (-t4 / 2.0 + t3) * self.ys[k + 1]
                + h * (t4 / 4.0 - t3 / 3.0) * self.ms[k + 1])
    }

    /// Largest `|kappa''|` over all segments (the derivative is quadratic on
    /// each segment, so endpoints and the vertex suffice).
    fn max_abs_derivative(&self) -> f64 {
        let mut best = 0.0f64;
        for k in 0..self.xs.len() - 1 {
            let h = self.xs[k + 1] - self.xs[k];
            let dy = self.ys[k] - self.ys[k + 1];
            let (m0, m1) = (self.ms[k], self.ms[k + 1]);
            let a = 6.0 * dy / h + 3.0 * m0 + 3.0 * m1;
            let b = -6.0 * dy / h - 4.0 * m0 - 2.0 * m1;
            let q = |t: f64| a * t * t + b * t + m0;
            best = best.max(q(0.0).abs()).max(q(1.0).abs());
            if a != 0.0 {
                let vertex = -b / (2.0 * a);
                if vertex > 0.0 && vertex < 1.0 {
                    best = best.max(q(vertex).abs());
                }
            }
        }
        best
    }
}

/// A validated curvature model. Immutable after construction.
#[derive(Clone, Debug)]
pub struct KappaModel {
    spec: KappaSpec,
    /// `a = inf kappa'`
    pub kappa_prime_inf: f64,
    /// `b = sup kappa'`
    pub kappa_prime_sup: f64,
    /// Bound on `kappa''`.
    pub kappa_second_sup: f64,
    table: Option<MonotoneCubic>,
}

/// The derivative quotients entering the FBSDE coefficients at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quotients {
    /// `U'/U''`
    pub phi: f64,
    /// `U''/U'`
    pub inv_phi: f64,
    /// `U'''/U'' = -kappa'`
    pub neg_kappa_prime: f64,
    /// `(U'/U'') (1 - U''' U' / (2 U''^2)) = phi (1 + kappa' phi / 2)`
    pub drift_coeff: f64,
}

impl Quotients {
    fn assemble(phi: f64, kappa_prime: f64) -> Self {
        Self {
            phi,
            inv_phi: 1.0 / phi,
            neg_kappa_prime: -kappa_prime,
            drift_coeff: phi * (1.0 + 0.5 * kappa_prime * phi),
        }
    }
}

/// Builds a curvature model, checking the family parameters.
pub fn make_kappa(spec: KappaSpec) -> Result<KappaModel> {
    let invalid = |msg: String| Err(FbsdeError::InvalidFamilyParams(msg));
    match &spec {
        KappaSpec::Linear { gamma, offset } => {
            if !(gamma.is_finite() && *gamma > 0.0) || !offset.is_finite() {
                return invalid(format!("linear family needs gamma > 0, got {gamma}"));
            }
            Ok(KappaModel {
                kappa_prime_inf: *gamma,
                kappa_prime_sup: *gamma,
                kappa_second_sup: 0.0,
                table: None,
                spec,
            })
        }
        KappaSpec::SoftplusBlend {
            lower,
            upper,
            sharpness,
            center,
        } => {
            let finite = [lower, upper, sharpness, center].iter().all(|v| v.is_finite());
            if !finite || *lower <= 0.0 || upper < lower || *sharpness <= 0.0 {
                return invalid(format!(
                    "softplus blend needs 0 < lower <= upper and sharpness > 0, got lower={lower}, upper={upper}, sharpness={sharpness}"
                ));
            }
            Ok(KappaModel {
                kappa_prime_inf: *lower,
                kappa_prime_sup: *upper,
                kappa_second_sup: (upper - lower) * sharpness / 4.0,
                table: None,
                spec,
            })
        }
        KappaSpec::Tabulated {
            knots,
            risk_aversion,
            offset,
        } => {
            if knots.len() < 2 || knots.len() != risk_aversion.len() {
                return invalid(format!(
                    "tabulated family needs >= 2 knots with matching values, got {} knots and {} values",
                    knots.len(),
                    risk_aversion.len()
                ));
            }
            if !knots.windows(2).all(|w| w[0] < w[1]) {
                return invalid("tabulated knots must be strictly increasing".into());
            }
            if !knots.iter().chain(risk_aversion).chain([offset]).all(|v| v.is_finite()) {
                return invalid("tabulated family has non-finite entries".into());
            }
            let lo = risk_aversion.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = risk_aversion.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo <= 0.0 {
                return invalid(format!("tabulated risk aversion must stay positive, min is {lo}"));
            }
            let table = MonotoneCubic::new(knots.clone(), risk_aversion.clone());
            Ok(KappaModel {
                kappa_prime_inf: lo,
                kappa_prime_sup: hi,
                kappa_second_sup: table.max_abs_derivative(),
                table: Some(table),
                spec,
            })
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `softplus(a + h) - softplus(a)` for `h >= 0` without cancellation when
/// both arguments are large.
fn softplus_increment(a: f64, h: f64) -> f64 {
    let b = a + h;
    if a >= 0.0 {
        h + ((-b).exp().ln_1p() - (-a).exp().ln_1p())
    } else {
        softplus(b) - softplus(a)
    }
}

impl KappaModel {
    pub fn spec(&self) -> &KappaSpec {
        &self.spec
    }

    /// True for the exponential-utility family (constant risk aversion).
    pub fn is_linear(&self) -> bool {
        matches!(self.spec, KappaSpec::Linear { .. })
    }

    pub fn kappa(&self, x: f64) -> f64 {
        match &self.spec {
            KappaSpec::Linear { gamma, offset } => gamma * x + offset,
            KappaSpec::SoftplusBlend {
                lower,
                upper,
                sharpness,
                center,
            } => lower * x + (upper - lower) / sharpness * softplus(sharpness * (x - center)),
            KappaSpec::Tabulated { offset, .. } => offset + self.cubic().integral(x),
        }
    }

    pub fn kappa_prime(&self, x: f64) -> f64 {
        match &self.spec {
            KappaSpec::Linear { gamma, .. } => *gamma,
            KappaSpec::SoftplusBlend {
                lower,
                upper,
                sharpness,
                center,
            } => lower + (upper - lower) * logistic(sharpness * (x - center)),
            KappaSpec::Tabulated { .. } => self.cubic().value(x),
        }
    }

    /// `kappa''` clamped at zero.
    pub fn kappa_second(&self, x: f64) -> f64 {
        self.kappa_second_raw(x).max(0.0)
    }

    /// `kappa''` of the interpolant as constructed, without clamping.
    pub fn kappa_second_raw(&self, x: f64) -> f64 {
        match &self.spec {
            KappaSpec::Linear { .. } => 0.0,
            KappaSpec::SoftplusBlend {
                lower,
                upper,
                sharpness,
                center,
            } => {
                let s = logistic(sharpness * (x - center));
                (upper - lower) * sharpness * s * (1.0 - s)
            }
            KappaSpec::Tabulated { .. } => self.cubic().derivative(x),
        }
    }

    /// `kappa(x + h) - kappa(x)`, evaluated without subtracting two large
    /// values where the family allows it.
    pub fn kappa_increment(&self, x: f64, h: f64) -> f64 {
        match &self.spec {
            KappaSpec::Linear { gamma, .. } => gamma * h,
            KappaSpec::SoftplusBlend {
                lower,
                upper,
                sharpness,
                center,
            } => {
                lower * h
                    + (upper - lower) / sharpness
                        * softplus_increment(sharpness * (x - center), sharpness * h)
            }
            KappaSpec::Tabulated { .. } => {
                let c = self.cubic();
                c.integral(x + h) - c.integral(x)
            }
        }
    }

    fn cubic(&self) -> &MonotoneCubic {
        self.table.as_ref().expect("tabulated model carries its interpolant")
    }

    /// Truncation length `M` with `exp(-a M) / a < TAIL_TOL`.
    pub fn truncation(&self) -> f64 {
        let a = self.kappa_prime_inf;
        (-(a * TAIL_TOL).ln() / a).max(1.0)
    }

    /// `int_x^{x+M} exp(-(kappa(y) - kappa(x))) dy`, i.e. `-phi(x)` up to
    /// the tail bound.
    fn tail_integral(&self, x: f64) -> Result<f64> {
        let m = self.truncation();
        let panels = (m * self.kappa_prime_sup / 2.0).ceil().max(4.0) as usize;
        integrate_adaptive(|h| (-self.kappa_increment(x, h)).exp(), 0.0, m, panels, QUAD_TOL, QUAD_BUDGET)
            .map_err(|budget| FbsdeError::QuadratureNonConvergence { x, budget })
    }

    /// Risk-tolerance quotient `phi = U'/U''`, strictly negative.
    pub fn phi(&self, x: f64) -> Result<f64> {
        match &self.spec {
            KappaSpec::Linear { gamma, .. } => Ok(-1.0 / gamma),
            _ => Ok(-self.tail_integral(x)?),
        }
    }

    pub fn quotients(&self, p: f64) -> Result<Quotients> {
        Ok(Quotients::assemble(self.phi(p)?, self.kappa_prime(p)))
    }

    /// `U'(p) = int_p^inf exp(-kappa(y)) dy`.
    pub fn marginal_utility(&self, p: f64) -> Result<f64> {
        Ok(-self.phi(p)? * (-self.kappa(p)).exp())
    }

    /// `U''(p) = -exp(-kappa(p))`.
    pub fn second_derivative(&self, p: f64) -> f64 {
        -(-self.kappa(p)).exp()
    }

    /// `U'''(p) = kappa'(p) exp(-kappa(p))`.
    pub fn third_derivative(&self, p: f64) -> f64 {
        self.kappa_prime(p) * (-self.kappa(p)).exp()
    }
}

/// Audits the curvature conditions on a probe grid.
pub fn validate_c1(model: &KappaModel, probe: &[f64]) -> ValidationReport {
    const TOL: f64 = 1e-12;
    let mut report = ValidationReport::default();
    if probe.is_empty() {
        report.push(CheckOutcome::new("probe grid non-empty", false, 0.0, 1.0));
        return report;
    }
    let a = model.kappa_prime_inf;
    let b = model.kappa_prime_sup;
    report.push(CheckOutcome::new(
        "inf kappa' > 0",
        a > 0.0 && a.is_finite(),
        a,
        0.0,
    ));
    report.push(CheckOutcome::new("sup kappa' < inf", b.is_finite() && b >= a, b, f64::INFINITY));

    let argmin = |f: &dyn Fn(f64) -> f64| -> (f64, f64) {
        probe
            .iter()
            .map(|&x| (f(x), x))
            .fold((f64::INFINITY, f64::NAN), |acc, v| if v.0 < acc.0 { v } else { acc })
    };
    let argmax = |f: &dyn Fn(f64) -> f64| -> (f64, f64) {
        let (v, x) = argmin(&|x| -f(x));
        (-v, x)
    };

    let (kp_min, x_min) = argmin(&|x| model.kappa_prime(x));
    report.push(
        CheckOutcome::new("kappa' >= declared inf", kp_min >= a - TOL, kp_min, a).at(vec![x_min]),
    );
    let (kp_max, x_max) = argmax(&|x| model.kappa_prime(x));
    report.push(
        CheckOutcome::new("kappa' <= declared sup", kp_max <= b + TOL, kp_max, b).at(vec![x_max]),
    );
    let (k2_min, x2_min) = argmin(&|x| model.kappa_second_raw(x));
    report.push(CheckOutcome::new("kappa'' >= 0", k2_min >= -TOL, k2_min, 0.0).at(vec![x2_min]));
    let (k2_max, x2_max) = argmax(&|x| model.kappa_second_raw(x));
    let c = model.kappa_second_sup;
    report.push(
        CheckOutcome::new("kappa'' <= declared sup", k2_max <= c + TOL, k2_max, c).at(vec![x2_max]),
    );
    report
}

/// Uniform probe grid `lo, lo + step, ..., hi`.
pub fn probe_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// `phi` tabulated on a uniform grid and joined by cubic Hermite pieces,
/// using the exact slope `phi' = 1 + kappa' phi`. Queries outside the table
/// fall back to direct quadrature.
#[derive(Clone, Debug)]
struct PhiTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl PhiTable {
    fn build(model: &KappaModel, lo: f64, hi: f64, step: f64) -> Result<Self> {
        let n = ((hi - lo) / step).round() as usize + 1;
        let mut values = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        for i in 0..n {
            let x = lo + step * i as f64;
            let phi = model.phi(x)?;
            values.push(phi);
            slopes.push(1.0 + model.kappa_prime(x) * phi);
        }
        Ok(Self {
            lo,
            step,
            values,
            slopes,
        })
    }

    fn lookup(&self, x: f64) -> Option<f64> {
        let s = (x - self.lo) / self.step;
        if !(s >= 0.0) || s > (self.values.len() - 1) as f64 {
            return None;
        }
        let k = (s.floor() as usize).min(self.values.len() - 2);
        let t = s - k as f64;
        let h = self.step;
        let (t2, t3) = (t * t, t * t * t);
        Some(
            (2.0 * t3 - 3.0 * t2 + 1.0) * self.values[k]
                + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
                + (-2.0 * t3 + 3.0 * t2) * self.values[k + 1]
                + (t3 - t2) * h * self.slopes[k + 1],
        )
    }
}

/// Fast quotient evaluation for inner loops. Exact for the linear family;
/// otherwise backed by a `phi` table on `[-40, 40]` with spacing 0.02.
#[derive(Clone, Debug)]
pub struct UtilityEvaluator {
    model: Arc<KappaModel>,
    table: Option<PhiTable>,
}

impl UtilityEvaluator {
    pub const TABLE_LO: f64 = -40.0;
    pub const TABLE_HI: f64 = 40.0;
    pub const TABLE_STEP: f64 = 0.02;

    pub fn new(model: Arc<KappaModel>) -> Result<Self> {
        let table = if model.is_linear() {
            None
        } else {
            Some(PhiTable::build(
                &model,
                Self::TABLE_LO,
                Self::TABLE_HI,
                Self::TABLE_STEP,
            )?)
        };
        Ok(Self { model, table })
    }

    pub fn model(&self) -> &KappaModel {
        &self.model
    }

    pub fn phi(&self, p: f64) -> Result<f64> {
        match self.table.as_ref().and_then(|t| t.lookup(p)) {
            Some(v) => Ok(v),
            None => self.model.phi(p),
        }
    }

    pub fn kappa_prime(&self, p: f64) -> f64 {
        self.model.kappa_prime(p)
    }

    pub fn quotients(&self, p: f64) -> Result<Quotients> {
        Ok(Quotients::assemble(self.phi(p)?, self.kappa_prime(p)))
    }

    pub fn marginal_utility(&self, p: f64) -> Result<f64> {
        Ok(-self.phi(p)? * (-self.model.kappa(p)).exp())
    }
}
