//! Field dumps and CSV exports.
//!
//! `field.json` layout (version 1):
//!
//! ```text
//! {
//!   "format": "fbsde-field", "version": 1,
//!   "epsilon": f64, "form": "p" | "b",
//!   "grid": { "horizon", "steps", "xcheck_axes": [{lo, hi, count}],
//!             "x_axis": {lo, hi, count}, "quad_nodes", "brownian_dim" },
//!   "first_step": k0,
//!   "lip_history": [max |u_x| for steps k0..=K],
//!   "values": [[u at every node] for steps k0..=K]
//! }
//! ```
//!
//! Nodes are ordered with the factor axes first and the wealth axis last
//! (fastest varying); factor coordinates are the scaled `x_check`.
//! Gradients are not stored and are recomputed on load.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::fbsde::Form;
use crate::grid::Grid;
use crate::simulate::PathEnsemble;
use crate::solver::DecouplingField;

pub const FIELD_FORMAT: &str = "fbsde-field";
pub const FIELD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FieldDump {
    format: String,
    version: u32,
    epsilon: f64,
    form: Form,
    grid: Grid,
    first_step: usize,
    lip_history: Vec<f64>,
    values: Vec<Vec<f64>>,
}

/// Shortest round-trip text of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn field_to_json(field: &DecouplingField) -> Result<String> {
    let dump = FieldDump {
        format: FIELD_FORMAT.into(),
        version: FIELD_VERSION,
        epsilon: field.epsilon,
        form: field.form,
        grid: field.grid.clone(),
        first_step: field.first_step,
        lip_history: field.lip_history.clone(),
        values: field.values.clone(),
    };
    Ok(serde_json::to_string(&dump)?)
}

pub fn field_from_json(text: &str) -> Result<DecouplingField> {
    let dump: FieldDump = serde_json::from_str(text)?;
    if dump.format != FIELD_FORMAT || dump.version != FIELD_VERSION {
        return Err(FbsdeError::InvalidConfig(format!(
            "unsupported field dump {} v{}",
            dump.format, dump.version
        )));
    }
    let mut grid = dump.grid;
    grid.rebuild_quadrature();
    let expected = grid.steps + 1 - dump.first_step.min(grid.steps + 1);
    if dump.values.len() != expected || dump.values.iter().any(|v| v.len() != grid.len()) {
        return Err(FbsdeError::InvalidConfig("field dump has inconsistent dimensions".into()));
    }
    Ok(DecouplingField::from_values(grid, dump.epsilon, dump.form, dump.first_step, dump.values))
}

pub fn save_field(field: &DecouplingField, path: &Path) -> Result<()> {
    std::fs::write(path, field_to_json(field)?)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<DecouplingField> {
    field_from_json(&std::fs::read_to_string(path)?)
}

/// CSV of one time slice: `xcheck_1..xcheck_N, x, u, du_dx`.
pub fn write_slice_csv(field: &DecouplingField, k: usize, path: &Path) -> Result<()> {
    let j = k
        .checked_sub(field.first_step)
        .filter(|j| *j < field.values.len())
        .ok_or_else(|| FbsdeError::InvalidConfig(format!("step {k} is not retained")))?;
    let mut w = BufWriter::new(File::create(path)?);
    let n = field.grid.dim_n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("xcheck_{i}")).collect();
    header.extend(["x", "u", "du_dx"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for idx in 0..field.grid.len() {
        let (xc, x) = field.grid.node(idx);
        line.clear();
        for v in &xc {
            let _ = write!(line, "{},", fmt_f64(*v));
        }
        let _ = write!(
            line,
            "{},{},{}",
            fmt_f64(x),
            fmt_f64(field.values[j][idx]),
            fmt_f64(field.grad_x[j][idx])
        );
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Ensemble CSV: `path, t, xcheck_1..N, x, y, z_1..d, pi_star_1..d, marginal`,
/// one row per path and time point. `limit` caps the number of paths.
pub fn write_ensemble_csv(e: &PathEnsemble, path: &Path, limit: Option<usize>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (n, d) = (e.dim_n, e.dim_d);
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("xcheck_{i}")));
    header.extend(["x", "y"].map(String::from));
    header.extend((1..=d).map(|i| format!("z_{i}")));
    header.extend((1..=d).map(|i| format!("pi_star_{i}")));
    header.push("marginal".into());
    writeln!(w, "{}", header.join(","))?;
    let count = limit.unwrap_or(e.paths.len()).min(e.paths.len());
    let mut line = String::new();
    for (pi, p) in e.paths.iter().take(count).enumerate() {
        for k in 0..=e.n_steps {
            line.clear();
            let _ = write!(line, "{pi},{}", fmt_f64(e.time(k)));
            for v in &p.xcheck[k * n..(k + 1) * n] {
                let _ = write!(line, ",{}", fmt_f64(*v));
            }
            let _ = write!(line, ",{},{}", fmt_f64(p.x[k]), fmt_f64(p.y[k]));
            for v in p.z[k * d..(k + 1) * d].iter().chain(&p.pi_star[k * d..(k + 1) * d]) {
                let _ = write!(line, ",{}", fmt_f64(*v));
            }
            let _ = write!(line, ",{}", fmt_f64(p.marginal[k]));
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}
