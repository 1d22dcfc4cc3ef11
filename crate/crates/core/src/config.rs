//! Run configuration documents and their translation into solver inputs.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::fbsde::{assemble, default_epsilon, FbsdeCoefficients, Form};
use crate::grid::{build_grid, Grid, GridSpec};
use crate::market::{validate_c2, MarketConfig, MarketSpec};
use crate::report::ValidationReport;
use crate::solver::SolveOptions;
use crate::utility::{make_kappa, probe_grid, validate_c1, KappaSpec, UtilityEvaluator};

/// Probe grid used by the curvature gate.
pub const C1_PROBE: (f64, f64, usize) = (-20.0, 20.0, 801);
/// Random pairs and seed used by the market gate.
pub const C2_PROBES: usize = 2000;
pub const C2_SEED: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AutoKeyword {
    Auto,
}

/// `epsilon` as a number or the keyword `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonChoice {
    Value(f64),
    #[serde(with = "auto_keyword")]
    Auto,
}

mod auto_keyword {
    use super::AutoKeyword;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoKeyword::deserialize(d).map(|_| ())
    }
}

impl Default for EpsilonChoice {
    fn default() -> Self {
        EpsilonChoice::Value(1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbsdeConfig {
    #[serde(default)]
    pub form: Form,
    #[serde(default)]
    pub epsilon: EpsilonChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Time steps of the simulation; the solver's step count when absent.
    pub n_steps: Option<usize>,
    /// Number of leading paths written to the ensemble CSV; all when absent.
    pub export_paths: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            seed: 0,
            n_steps: None,
            export_paths: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    ExponentialOracle,
    GradientBound,
    Martingale,
    EpsilonEquivalence,
    FormEquivalence,
    WealthConsistency,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::ExponentialOracle,
        CheckKind::GradientBound,
        CheckKind::Martingale,
        CheckKind::EpsilonEquivalence,
        CheckKind::FormEquivalence,
        CheckKind::WealthConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::ExponentialOracle => "exponential_oracle",
            CheckKind::GradientBound => "gradient_bound",
            CheckKind::Martingale => "martingale",
            CheckKind::EpsilonEquivalence => "epsilon_equivalence",
            CheckKind::FormEquivalence => "form_equivalence",
            CheckKind::WealthConsistency => "wealth_consistency",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub checks: Vec<CheckKind>,
    /// Constant added to the solved field before the diagnostics run.
    pub field_shift: f64,
    /// Second scale of the epsilon-equivalence check; half the run's scale
    /// when absent.
    pub epsilon_alt: Option<f64>,
    /// Slack on the upper gradient bound.
    pub gradient_tol: f64,
    /// `u_x` must stay above this value.
    pub gradient_floor: f64,
    /// Relative tolerance of the exponential oracle comparison.
    pub oracle_rel_tol: f64,
    /// Largest admissible `|z|` of the martingale ladder.
    pub z_limit: f64,
    /// Ladder points on `(0, T]`.
    pub ladder_points: usize,
    /// Largest per-path relative error of the stochastic-exponential
    /// reconstruction of `U'(X_T + Y_T)`.
    pub reconstruction_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: CheckKind::ALL.to_vec(),
            field_shift: 0.0,
            epsilon_alt: None,
            gradient_tol: 0.02,
            gradient_floor: -0.99,
            oracle_rel_tol: 1e-3,
            z_limit: 3.0,
            ladder_points: 5,
            reconstruction_tol: 0.05,
        }
    }
}

/// A complete run document. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub utility: KappaSpec,
    pub market: MarketConfig,
    #[serde(default)]
    pub fbsde: FbsdeConfig,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Output directory; the command line takes precedence.
    #[serde(default)]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FbsdeError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Everything a run needs, after both condition gates have passed.
#[derive(Clone, Debug)]
pub struct Problem {
    pub config: RunConfig,
    pub market: Arc<MarketSpec>,
    pub utility: Arc<UtilityEvaluator>,
    pub coefficients: FbsdeCoefficients,
    pub grid: Grid,
    pub c1: ValidationReport,
    pub c2: ValidationReport,
}

impl Problem {
    /// Builds the problem and runs the condition gates. Gate failures
    /// surface as [`FbsdeError::GateFailure`].
    pub fn new(config: RunConfig) -> Result<Self> {
        let kappa = Arc::new(make_kappa(config.utility.clone())?);
        let c1 = validate_c1(&kappa, &probe_grid(C1_PROBE.0, C1_PROBE.1, C1_PROBE.2));
        let market = Arc::new(MarketSpec::new(config.market.clone())?);
        let c2 = validate_c2(&market, C2_PROBES, C2_SEED);
        for (label, report) in [("utility", &c1), ("market", &c2)] {
            if !report.passed() {
                let failed: Vec<String> = report
                    .failures()
                    .map(|c| format!("{} (observed {:e}, limit {:e})", c.name, c.observed, c.limit))
                    .collect();
                return Err(FbsdeError::GateFailure(format!("{label}: {}", failed.join("; "))));
            }
        }
        let epsilon = match config.fbsde.epsilon {
            EpsilonChoice::Value(e) => e,
            EpsilonChoice::Auto => default_epsilon(&market),
        };
        let utility = Arc::new(UtilityEvaluator::new(kappa)?);
        let coefficients = assemble(utility.clone(), market.clone(), config.fbsde.form, epsilon)?;
        let grid = grid_for(&config.grid, &coefficients)?;
        Ok(Self {
            config,
            market,
            utility,
            coefficients,
            grid,
            c1,
            c2,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.coefficients.epsilon
    }

    /// Initial factor value in scaled coordinates.
    pub fn xcheck0(&self) -> Vec<f64> {
        initial_xcheck(&self.config.grid, self.market.dim_n, self.epsilon())
    }

    pub fn x0(&self) -> f64 {
        self.config.grid.x0
    }
}

/// Initial factor value of a grid spec, mapped to scale `epsilon`.
pub fn initial_xcheck(spec: &GridSpec, dim_n: usize, epsilon: f64) -> Vec<f64> {
    match &spec.xtilde0 {
        Some(v) => v.iter().map(|x| x / epsilon).collect(),
        None => vec![0.0; dim_n],
    }
}

/// Bound on the wealth volatility `|pi_1 theta phi + pi_1 z|` used by the
/// margin rule: `sup |theta| / inf kappa'`.
pub fn wealth_vol_bound(c: &FbsdeCoefficients) -> f64 {
    c.market().constants.sup_theta / c.utility().model().kappa_prime_inf
}

/// Solver grid for `spec` at the coefficients' scale.
pub fn grid_for(spec: &GridSpec, c: &FbsdeCoefficients) -> Result<Grid> {
    if let Some(v) = &spec.xtilde0 {
        if v.len() != c.dim_n() {
            return Err(FbsdeError::InvalidGrid(format!(
                "xtilde0 has {} entries for a {}-dimensional factor",
                v.len(),
                c.dim_n()
            )));
        }
    }
    build_grid(spec, c.dim_n(), c.dim_d(), c.epsilon, wealth_vol_bound(c))
}
