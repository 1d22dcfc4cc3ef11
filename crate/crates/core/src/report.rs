use std::fmt;

use serde::{Deserialize, Serialize};

/// One audited condition: pass/fail together with the worst probe seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the audited quantity.
    pub observed: f64,
    /// Limit the observed value was compared against.
    pub limit: f64,
    /// Probe coordinates at which `observed` was attained (empty for
    /// structural checks).
    pub worst_at: Vec<f64>,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, observed: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed,
            observed,
            limit,
            worst_at: Vec::new(),
        }
    }

    pub fn at(mut self, point: Vec<f64>) -> Self {
        self.worst_at = point;
        self
    }
}

/// Report produced by the condition audits. Failures are entries, never errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn push(&mut self, check: CheckOutcome) {
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}: observed {:.6e}, limit {:.6e}{}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.observed,
                c.limit,
                if c.worst_at.is_empty() {
                    String::new()
                } else {
                    format!(" at {:?}", c.worst_at)
                }
            )?;
        }
        Ok(())
    }
}
