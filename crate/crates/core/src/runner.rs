//! Command orchestration: gates, solve, simulate, verify, and artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{grid_for, CheckKind, Problem, RunConfig};
use crate::error::{FbsdeError, Result};
use crate::fbsde::Form;
use crate::io::{save_field, write_ensemble_csv, write_slice_csv};
use crate::simulate::{simulate, PathEnsemble, SimulateOptions};
use crate::solver::{solve_backward, DecouplingField, SolveReport, SolveStatus};
use crate::verify::{
    epsilon_equivalence_check, exponential_oracle_check, form_equivalence_check, gradient_bound_check,
    martingale_check, martingale_diagnostic, oracle_for, wealth_consistency_check, CheckResult,
    VerificationReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_SINGULARITY: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

/// Residual allowed between recorded and strategy-implied wealth increments.
pub const WEALTH_TOL: f64 = 1e-10;

pub const DEFAULT_OUTPUT: &str = "fbsde-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Simulate,
    Verify,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::All => "all",
        }
    }

    fn simulates(self) -> bool {
        matches!(self, Command::Simulate | Command::All)
    }

    fn verifies(self) -> bool {
        matches!(self, Command::Verify | Command::All)
    }
}

pub fn exit_code(e: &FbsdeError) -> i32 {
    match e {
        FbsdeError::InvalidConfig(_)
        | FbsdeError::InvalidFamilyParams(_)
        | FbsdeError::InvalidMarket(_)
        | FbsdeError::InvalidGrid(_)
        | FbsdeError::DomainTooSmall { .. }
        | FbsdeError::Json(_) => EXIT_CONFIG,
        FbsdeError::GateFailure(_) => EXIT_GATE,
        FbsdeError::SingularityDetected { .. } => EXIT_SINGULARITY,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    epsilon: f64,
    form: Form,
    solve: &'a SolveReport,
    seed: Option<u64>,
    files: Vec<&'a str>,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: String,
    pub field: Option<DecouplingField>,
    pub verification: Option<VerificationReport>,
}

/// Runs `command` on a parsed configuration, writing artifacts to `out`.
pub fn execute(command: Command, config: RunConfig, out: &Path) -> Result<RunOutcome> {
    let problem = Problem::new(config)?;
    std::fs::create_dir_all(out)?;
    let mut summary = String::new();
    let c = &problem.coefficients;
    let _ = writeln!(
        summary,
        "{}: {:?} form, epsilon = {}, grid {} nodes x {} steps",
        command.name(),
        c.form,
        c.epsilon,
        problem.grid.len(),
        problem.grid.steps
    );

    let (field, report) = solve_backward(c, &problem.grid, &problem.config.solver)?;
    let _ = writeln!(
        summary,
        "solve: {:?}, max |u_x| = {:.6}, u_x in [{:.6}, {:.6}], median iterations {}",
        report.status, report.max_lip_x, report.min_grad_x, report.max_grad_x, report.median_iterations
    );
    let mut files = vec!["field.json"];
    save_field(&field, &out.join("field.json"))?;
    if field.is_complete() {
        write_slice_csv(&field, 0, &out.join("slice_t0.csv"))?;
        files.push("slice_t0.csv");
        let x0 = problem.x0();
        let _ = writeln!(summary, "u(0, x_check0, x0) = {}", field.evaluate(0.0, &problem.xcheck0(), x0));
    }
    let finish = |files: Vec<&str>, seed: Option<u64>| -> Result<()> {
        let m = Manifest {
            command: command.name(),
            epsilon: c.epsilon,
            form: c.form,
            solve: &report,
            seed,
            files,
        };
        std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    };
    match &report.status {
        SolveStatus::Converged => {}
        SolveStatus::SingularityDetected { .. } => {
            finish(files, None)?;
            return Ok(RunOutcome {
                exit_code: EXIT_SINGULARITY,
                summary,
                field: Some(field),
                verification: None,
            });
        }
        SolveStatus::FixedPointFailure { t, node } => {
            finish(files, None)?;
            return Err(FbsdeError::FixedPointFailure {
                t: *t,
                node: node.clone(),
            });
        }
    }

    let sim_cfg = &problem.config.simulate;
    let n_steps = sim_cfg.n_steps.unwrap_or(problem.grid.steps);
    let mut ensemble: Option<PathEnsemble> = None;
    if command.simulates() {
        let opts = SimulateOptions::new(sim_cfg.n_paths, n_steps, sim_cfg.seed);
        let e = simulate(&field, c, &problem.xcheck0(), problem.x0(), &opts)?;
        write_ensemble_csv(&e, &out.join("ensemble.csv"), sim_cfg.export_paths)?;
        files.push("ensemble.csv");
        let _ = writeln!(
            summary,
            "simulate: {} paths x {} steps, max |Z| = {:.6}",
            e.n_paths(),
            e.n_steps,
            e.max_abs_z()
        );
        ensemble = Some(e);
    }

    let mut verification = None;
    let mut code = EXIT_OK;
    if command.verifies() {
        let v = verify_problem(&problem, &field, ensemble.take())?;
        std::fs::write(out.join("verification.json"), serde_json::to_string_pretty(&v)?)?;
        files.push("verification.json");
        for check in &v.checks {
            let _ = writeln!(summary, "verify {}: {:?}", check.name, check.status);
            for (k, val) in &check.metrics {
                let _ = writeln!(summary, "    {k} = {val:e}");
            }
        }
        if !v.passed() {
            code = EXIT_VERIFICATION;
        }
        verification = Some(v);
    }
    finish(files, command.simulates().then_some(sim_cfg.seed))?;
    Ok(RunOutcome {
        exit_code: code,
        summary,
        field: Some(field),
        verification,
    })
}

/// Runs every configured check against `field`, shifted by the configured
/// amount. `ensemble` is reused for the path checks when it is a P-form
/// simulation of the unshifted field.
pub fn verify_problem(
    problem: &Problem,
    field: &DecouplingField,
    ensemble: Option<PathEnsemble>,
) -> Result<VerificationReport> {
    let cfg = &problem.config.verify;
    let c = &problem.coefficients;
    let shift = cfg.field_shift;
    let candidate = if shift != 0.0 { field.shifted(shift) } else { field.clone() };
    let mut p_ensemble = ensemble.filter(|e| e.measure == Form::PForm && shift == 0.0);
    let mut checks = Vec::new();
    let mut seen = Vec::new();
    for &kind in &cfg.checks {
        if seen.contains(&kind) {
            continue;
        }
        seen.push(kind);
        let result = match kind {
            CheckKind::ExponentialOracle => {
                match oracle_for(&problem.config.utility, &problem.market, problem.grid.horizon) {
                    Some(o) => exponential_oracle_check(&candidate, &o, cfg.oracle_rel_tol)?,
                    None => CheckResult::skipped(
                        kind.name(),
                        "needs linear kappa, constant theta and a constant liability",
                    ),
                }
            }
            CheckKind::GradientBound => {
                gradient_bound_check(&candidate, &problem.market, cfg.gradient_tol, cfg.gradient_floor)
            }
            CheckKind::Martingale => {
                let e = p_ensemble_for(problem, &candidate, &mut p_ensemble)?;
                let report = martingale_diagnostic(e, &problem.utility, cfg.ladder_points)?;
                martingale_check(&report, cfg.z_limit, cfg.reconstruction_tol)
            }
            CheckKind::WealthConsistency => {
                let e = p_ensemble_for(problem, &candidate, &mut p_ensemble)?;
                wealth_consistency_check(e, WEALTH_TOL)
            }
            CheckKind::EpsilonEquivalence => {
                let eps2 = cfg.epsilon_alt.unwrap_or(0.5 * c.epsilon);
                epsilon_equivalence_check(
                    c,
                    &problem.config.grid,
                    &candidate,
                    eps2,
                    &problem.config.solver,
                    grid_for,
                )?
            }
            CheckKind::FormEquivalence => {
                form_equivalence_check(c, &problem.grid, &candidate, &problem.config.solver)?
            }
        };
        checks.push(result);
    }
    Ok(VerificationReport {
        epsilon: c.epsilon,
        form: c.form,
        field_shift: shift,
        checks,
    })
}

fn p_ensemble_for<'a>(
    problem: &Problem,
    field: &DecouplingField,
    slot: &'a mut Option<PathEnsemble>,
) -> Result<&'a PathEnsemble> {
    if slot.is_none() {
        let sim = &problem.config.simulate;
        let n_steps = sim.n_steps.unwrap_or(problem.grid.steps);
        let opts = SimulateOptions::new(sim.n_paths, n_steps, sim.seed);
        let p = problem.coefficients.with_form(Form::PForm);
        *slot = Some(simulate(field, &p, &problem.xcheck0(), problem.x0(), &opts)?);
    }
    Ok(slot.as_ref().expect("filled above"))
}

/// Resolves the worker count: explicit value, then the environment, then
/// the machine's parallelism.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Entry point of the command-line tool. Returns the process exit code.
pub fn run(command: Command, config_path: &Path, workers: Option<usize>, out: Option<PathBuf>) -> i32 {
    let config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                FbsdeError::Io(_) => EXIT_RUNTIME,
                other => exit_code(&other),
            };
        }
    };
    let out = out
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(resolve_workers(workers)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| execute(command, config, &out)) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if outcome.exit_code == EXIT_SINGULARITY {
                eprintln!("error: the decoupling field became singular; see manifest.json");
            } else if outcome.exit_code == EXIT_VERIFICATION {
                eprintln!("error: verification failed; see verification.json");
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
