//! Coefficient sets of the utility FBSDE.
//!
//! The factor is carried in scaled coordinates `x_check = x~ / epsilon`, and
//! every coefficient is written through `phi = U'/U''` and `kappa'` rather
//! than raw derivatives of `U`. With `p = x + y` and `pi_1 theta` the traded
//! part of the market price of risk:
//!
//! ```text
//! vol_x    = -(pi_1 theta * phi(p) + pi_1 z)
//! P-form:  drift_x = vol_x . pi_1 theta
//!          f = |pi_1 theta|^2 (kappa' phi^2 / 2 + phi) + z . pi_1 theta + |pi_2 z|^2 kappa' / 2
//! B-form:  drift_x = 0,  factor drift (mu~ - pi_1 theta^T sigma~) / epsilon
//!          f = |pi_1 theta|^2 phi (1 + kappa' phi / 2) + |pi_2 z|^2 kappa' / 2
//! ```
//!
//! The backward equation reads `dY = f dt + Z . dW` (or `dB` in the B-form).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::market::MarketSpec;
use crate::utility::{KappaModel, UtilityEvaluator};

/// Which Brownian motion drives the system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Form {
    /// Original system driven by `W`.
    #[default]
    #[serde(rename = "p")]
    PForm,
    /// Drift-absorbed system driven by `B = W + int pi_1 theta dt`.
    #[serde(rename = "b")]
    BForm,
}

impl Form {
    pub fn other(self) -> Self {
        match self {
            Form::PForm => Form::BForm,
            Form::BForm => Form::PForm,
        }
    }
}

/// Coefficients that depend only on `(t, x_check)`, evaluated once per node.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    /// Factor drift in scaled coordinates, length `N`.
    pub drift: Vec<f64>,
    /// Factor volatility in scaled coordinates, `d x N` row-major.
    pub vol: Vec<f64>,
    /// `pi_1 theta`, length `d`.
    pub theta_traded: Vec<f64>,
    /// `|pi_1 theta|^2`
    pub theta_traded_sq: f64,
}

/// An assembled coefficient set (P- or B-form) at a fixed scale `epsilon`.
#[derive(Clone, Debug)]
pub struct FbsdeCoefficients {
    pub form: Form,
    pub epsilon: f64,
    utility: Arc<UtilityEvaluator>,
    market: Arc<MarketSpec>,
}

/// Default scale: the largest `epsilon <= 1` with
/// `epsilon * L_{H,x~} <= 0.1 (1 - L_{H,x})`.
pub fn default_epsilon(market: &MarketSpec) -> f64 {
    let c = market.constants;
    if c.lip_h_xtilde <= 0.0 {
        1.0
    } else {
        (0.1 * (1.0 - c.lip_h_x) / c.lip_h_xtilde).min(1.0)
    }
}

pub fn assemble_p_form(
    utility: Arc<KappaModel>,
    market: Arc<MarketSpec>,
    epsilon: f64,
) -> Result<FbsdeCoefficients> {
    assemble(Arc::new(UtilityEvaluator::new(utility)?), market, Form::PForm, epsilon)
}

pub fn assemble_b_form(
    utility: Arc<KappaModel>,
    market: Arc<MarketSpec>,
    epsilon: f64,
) -> Result<FbsdeCoefficients> {
    assemble(Arc::new(UtilityEvaluator::new(utility)?), market, Form::BForm, epsilon)
}

/// Assembles either form from a prepared utility evaluator, so several
/// coefficient sets can share one `phi` table.
pub fn assemble(
    utility: Arc<UtilityEvaluator>,
    market: Arc<MarketSpec>,
    form: Form,
    epsilon: f64,
) -> Result<FbsdeCoefficients> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FbsdeError::InvalidConfig(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(FbsdeCoefficients {
        form,
        epsilon,
        utility,
        market,
    })
}

/// The same problem at scale `new_epsilon`; solutions map through
/// `x_check' = (epsilon / new_epsilon) x_check` with `X, Y, Z` unchanged.
pub fn rescale_epsilon(c: &FbsdeCoefficients, new_epsilon: f64) -> Result<FbsdeCoefficients> {
    assemble(c.utility.clone(), c.market.clone(), c.form, new_epsilon)
}

impl FbsdeCoefficients {
    pub fn market(&self) -> &MarketSpec {
        &self.market
    }

    pub fn market_arc(&self) -> Arc<MarketSpec> {
        self.market.clone()
    }

    pub fn utility(&self) -> &UtilityEvaluator {
        &self.utility
    }

    pub fn utility_arc(&self) -> Arc<UtilityEvaluator> {
        self.utility.clone()
    }

    pub fn dim_n(&self) -> usize {
        self.market.dim_n
    }

    pub fn dim_d(&self) -> usize {
        self.market.dim_d()
    }

    pub fn dim_d1(&self) -> usize {
        self.market.dim_d1
    }

    /// Same utility and market in the other form.
    pub fn with_form(&self, form: Form) -> FbsdeCoefficients {
        FbsdeCoefficients {
            form,
            ..self.clone()
        }
    }

    fn unscale(&self, xcheck: &[f64]) -> Vec<f64> {
        xcheck.iter().map(|v| self.epsilon * v).collect()
    }

    pub fn factor_state(&self, t: f64, xcheck: &[f64]) -> FactorState {
        let m = &self.market;
        let (n, d, d1) = (m.dim_n, m.dim_d(), m.dim_d1);
        let xt = self.unscale(xcheck);
        let mut drift = vec![0.0; n];
        m.tilde_mu_into(t, &xt, &mut drift);
        let mut vol = vec![0.0; d * n];
        m.tilde_sigma_into(t, &xt, &mut vol);
        let mut theta = vec![0.0; d];
        m.theta_into(t, &xt, &mut theta);
        for th in theta.iter_mut().skip(d1) {
            *th = 0.0;
        }
        if self.form == Form::BForm {
            for (j, dr) in drift.iter_mut().enumerate() {
                let shift: f64 = (0..d1).map(|i| theta[i] * vol[i * n + j]).sum();
                *dr -= shift;
            }
        }
        for dr in drift.iter_mut() {
            *dr /= self.epsilon;
        }
        for v in vol.iter_mut() {
            *v /= self.epsilon;
        }
        let theta_traded_sq = theta.iter().map(|x| x * x).sum();
        FactorState {
            drift,
            vol,
            theta_traded: theta,
            theta_traded_sq,
        }
    }

    /// Factor drift in scaled coordinates.
    pub fn forward_drift_xtilde(&self, t: f64, xcheck: &[f64]) -> Vec<f64> {
        self.factor_state(t, xcheck).drift
    }

    /// Factor volatility in scaled coordinates, `d x N` row-major.
    pub fn forward_vol_xtilde(&self, t: f64, xcheck: &[f64]) -> Vec<f64> {
        self.factor_state(t, xcheck).vol
    }

    /// Wealth volatility into `out` (length `d`); the untraded entries are zero.
    pub fn vol_x_into(&self, fs: &FactorState, p: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let phi = self.utility.phi(p)?;
        let d1 = self.dim_d1();
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i < d1 {
                -(fs.theta_traded[i] * phi + z[i])
            } else {
                0.0
            };
        }
        Ok(())
    }

    /// Wealth drift given the wealth volatility from [`Self::vol_x_into`].
    pub fn drift_x_from_vol(&self, fs: &FactorState, vol_x: &[f64]) -> f64 {
        match self.form {
            Form::PForm => vol_x.iter().zip(&fs.theta_traded).map(|(v, t)| v * t).sum(),
            Form::BForm => 0.0,
        }
    }

    pub fn driver_at(&self, fs: &FactorState, p: f64, z: &[f64]) -> Result<f64> {
        let q = self.utility.quotients(p)?;
        let kappa_prime = -q.neg_kappa_prime;
        let d1 = self.dim_d1();
        let untraded_sq: f64 = z.iter().skip(d1).map(|v| v * v).sum();
        let quad = 0.5 * untraded_sq * kappa_prime;
        let th2 = fs.theta_traded_sq;
        Ok(match self.form {
            Form::PForm => {
                let cross: f64 = z.iter().zip(&fs.theta_traded).map(|(a, b)| a * b).sum();
                0.5 * th2 * kappa_prime * q.phi * q.phi + th2 * q.phi + cross + quad
            }
            Form::BForm => th2 * q.drift_coeff + quad,
        })
    }

    pub fn forward_vol_x(&self, t: f64, xcheck: &[f64], p: f64, z: &[f64]) -> Result<Vec<f64>> {
        let fs = self.factor_state(t, xcheck);
        let mut out = vec![0.0; self.dim_d()];
        self.vol_x_into(&fs, p, z, &mut out)?;
        Ok(out)
    }

    pub fn forward_drift_x(&self, t: f64, xcheck: &[f64], p: f64, z: &[f64]) -> Result<f64> {
        let fs = self.factor_state(t, xcheck);
        let mut vol = vec![0.0; self.dim_d()];
        self.vol_x_into(&fs, p, z, &mut vol)?;
        Ok(self.drift_x_from_vol(&fs, &vol))
    }

    /// Backward driver `f(t, x_check, p, z)` with `p = x + y`.
    pub fn driver(&self, t: f64, xcheck: &[f64], p: f64, z: &[f64]) -> Result<f64> {
        let fs = self.factor_state(t, xcheck);
        self.driver_at(&fs, p, z)
    }

    /// `H~(epsilon x_check, x)`.
    pub fn terminal(&self, xcheck: &[f64], x: f64) -> f64 {
        self.market.terminal_h(&self.unscale(xcheck), x)
    }

    /// `U'(p)` through the shared evaluator.
    pub fn marginal_utility(&self, p: f64) -> Result<f64> {
        self.utility.marginal_utility(p)
    }
}
