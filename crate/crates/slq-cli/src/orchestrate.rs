//! Staged experiment orchestration: problem construction, assumption
//! checks, backward solve with regime selection, closed-loop value
//! simulation, identity verification, and manifest emission.
//!
//! Every stage is recorded in the run manifest with wall-clock accounting;
//! a failing stage aborts the pipeline but keeps the partial outputs and
//! still writes the manifest, with the failure stage named.

use crate::config::ExperimentConfig;
use crate::report::{
    emit_reports, iterations_csv, p_diagnostics_csv, sha256_hex, Emitter, RunManifest,
};
use nalgebra::DVector;
use serde::Serialize;
use slq_core::error::{Error, Result};
use slq_core::forward::{evaluate_cost, flow_map, TimeGrid};
use slq_core::problem::{check_assumptions, LQProblem};
use slq_core::riccati::{
    solve_riccati_bsde_direct, solve_riccati_ode, theta_fixed_point, FixedPointOptions,
    IterationStat, Representation, RiccatiSolution,
};
use slq_core::verify::{
    check_cost_decomposition, check_hlambda_transposition, check_optimality,
    check_stationarity_and_k, check_transposition_identity, check_value_identity, IdentityReport,
    TestInputSet,
};
use std::path::Path;
use std::time::Instant;

/// How far the pipeline runs: the backward solve alone, plus the
/// closed-loop value simulation, plus the identity checks, or everything.
#[derive(Debug, Clone, Copy)]
pub enum Scope {
    Solve,
    Simulate,
    Verify,
    Run,
}

impl Scope {
    fn wants_value(self) -> bool {
        matches!(self, Scope::Simulate | Scope::Run)
    }

    fn wants_verify(self) -> bool {
        matches!(self, Scope::Verify | Scope::Run)
    }
}

/// Final disposition of a run, mapped to the process exit code.
#[derive(Debug, Clone)]
pub enum ExitKind {
    Success,
    /// Invalid configuration or problem data (exit 2).
    ConfigError(String),
    /// Solver or simulation failure (exit 3).
    SolverError(String),
    /// All stages ran, but this many identity checks failed (exit 4).
    VerificationFailed(usize),
}

impl ExitKind {
    pub fn code(&self) -> u8 {
        match self {
            ExitKind::Success => 0,
            ExitKind::ConfigError(_) => 2,
            ExitKind::SolverError(_) => 3,
            ExitKind::VerificationFailed(_) => 4,
        }
    }
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub exit: ExitKind,
}

/// Which exit a core error maps to: data problems are configuration
/// errors, everything else is a solver failure.
fn error_exit(e: &Error) -> ExitKind {
    match e {
        Error::Config(_) | Error::Assumption(_) => ExitKind::ConfigError(e.to_string()),
        _ => ExitKind::SolverError(e.to_string()),
    }
}

macro_rules! try_stage {
    ($manifest:expr, $stage:expr, $t:expr, $expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(e) => {
                $manifest.record_fail($stage, $t, &e);
                return error_exit(&e);
            }
        }
    };
}

/// Runs the configured experiment into `out_dir`. The manifest is written
/// even when a stage fails; partial outputs are retained.
pub fn run_experiment(cfg: &ExperimentConfig, scope: Scope, out_dir: &Path) -> RunOutput {
    let echo = cfg.canonical_json();
    let mut manifest = RunManifest::new(sha256_hex(echo.as_bytes()), cfg.seed);
    let mut emitter = match Emitter::new(out_dir) {
        Ok(e) => e,
        Err(e) => {
            return RunOutput {
                manifest,
                exit: ExitKind::ConfigError(e.to_string()),
            }
        }
    };
    let exit = pipeline(cfg, scope, &mut emitter, &mut manifest, &echo);
    manifest.files = emitter.files.clone();
    let mut exit = exit;
    if let Err(e) = emitter.write_manifest(&manifest) {
        if matches!(exit, ExitKind::Success) {
            exit = ExitKind::ConfigError(e.to_string());
        } else {
            eprintln!("warning: {e}");
        }
    }
    RunOutput { manifest, exit }
}

fn pipeline(
    cfg: &ExperimentConfig,
    scope: Scope,
    emitter: &mut Emitter,
    manifest: &mut RunManifest,
    echo: &str,
) -> ExitKind {
    // Stage: config — build the problem and echo the effective config.
    let t = Instant::now();
    let problem = try_stage!(manifest, "config", t, cfg.build_problem());
    try_stage!(manifest, "config", t, emitter.write("config.json", echo.as_bytes()));
    manifest.record_ok(
        "config",
        format!(
            "{}: {} modes, horizon {}, {} steps",
            cfg.problem.preset.as_deref().unwrap_or("parametric"),
            problem.basis.modes(),
            problem.horizon,
            problem.time_steps
        ),
        t,
    );

    // Stage: assumptions — sampled surrogates for the standing conditions.
    let t = Instant::now();
    let assumptions = check_assumptions(&problem, 64, cfg.seed.unwrap_or(0));
    if cfg.has_format("json") {
        try_stage!(
            manifest,
            "assumptions",
            t,
            emitter.write_json("assumptions.json", &assumptions)
        );
    }
    if !assumptions.all_mandatory_pass() {
        let witness = assumptions
            .failures()
            .iter()
            .map(|i| format!("{}: {}", i.name, i.witness))
            .collect::<Vec<_>>()
            .join("; ");
        let err = Error::Assumption(witness);
        manifest.record_fail("assumptions", t, &err);
        return error_exit(&err);
    }
    manifest.record_ok(
        "assumptions",
        format!("{} conditions verified", assumptions.items.len()),
        t,
    );

    // Stage: solve — regime selection and the backward sweep.
    let t = Instant::now();
    let grid = try_stage!(manifest, "solve", t, cfg.grid());
    let regime = try_stage!(manifest, "solve", t, select_regime(cfg, &problem));
    manifest.regime = Some(regime.name().to_string());
    let solution = try_stage!(manifest, "solve", t, run_solver(cfg, &problem, &grid, regime));
    if cfg.dump_p_values() && cfg.has_format("csv") {
        try_stage!(
            manifest,
            "solve",
            t,
            emitter.write("p_diagnostics.csv", p_diagnostics_csv(&solution).as_bytes())
        );
    }
    if cfg.dump_iterations() && !solution.iterations.is_empty() && cfg.has_format("csv") {
        try_stage!(
            manifest,
            "solve",
            t,
            emitter.write("iterations.csv", iterations_csv(&solution).as_bytes())
        );
    }
    if cfg.has_format("json") {
        let summary = SolveSummary::new(regime.name(), &problem, &grid, &solution);
        try_stage!(manifest, "solve", t, emitter.write_json("solution.json", &summary));
    }
    manifest.record_ok(
        "solve",
        format!("{} on {} steps, min eig K {:.3e}", regime.name(), grid.steps(), solution.k_min_eig),
        t,
    );

    // Stage: value — closed-loop simulation against the quadratic form.
    if scope.wants_value() {
        let t = Instant::now();
        let seed = try_stage!(manifest, "value", t, cfg.require_seed());
        let eta = initial_state(&problem, cfg.state_scale());
        let bundle = try_stage!(
            manifest,
            "value",
            t,
            flow_map(&problem, &solution, &grid, grid.t0(), &eta, cfg.verify_paths(), seed)
        );
        let cost = try_stage!(manifest, "value", t, evaluate_cost(&problem, &bundle, None, false));
        let quadratic_form = 0.5 * (solution.p0() * &eta).dot(&eta);
        let summary = ValueSummary {
            paths: cost.paths,
            cost_mean: cost.mean,
            cost_se: cost.std_error,
            quadratic_form,
            abs_gap: (cost.mean - quadratic_form).abs(),
        };
        if cfg.has_format("json") {
            try_stage!(manifest, "value", t, emitter.write_json("value.json", &summary));
        }
        manifest.record_ok(
            "value",
            format!(
                "closed-loop cost {:.6e} (se {:.1e}) vs quadratic form {:.6e}",
                cost.mean, cost.std_error, quadratic_form
            ),
            t,
        );
    }

    // Stage: verify — the requested identity checks.
    if scope.wants_verify() {
        let t = Instant::now();
        let checks = cfg.effective_checks();
        if checks.is_empty() {
            manifest.record_ok("verify", "0 checks requested".into(), t);
        } else {
            let seed = try_stage!(manifest, "verify", t, cfg.require_seed());
            let reports = try_stage!(
                manifest,
                "verify",
                t,
                run_checks(cfg, &problem, &grid, &solution, &checks, seed)
            );
            let json = cfg.has_format("json");
            let csv = cfg.has_format("csv");
            if json || csv {
                try_stage!(manifest, "verify", t, emit_reports(emitter, &reports, json, csv));
            }
            let passed = reports.iter().filter(|r| r.pass).count();
            manifest.checks_total = reports.len();
            manifest.checks_passed = passed;
            manifest.record_ok("verify", format!("{passed}/{} checks passed", reports.len()), t);
            if passed < reports.len() {
                return ExitKind::VerificationFailed(reports.len() - passed);
            }
        }
    }

    ExitKind::Success
}

#[derive(Debug, Clone, Copy)]
enum Regime {
    Ode,
    FixedPoint,
    BsdeDirect,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::Ode => "riccati-ode",
            Regime::FixedPoint => "theta-fixed-point",
            Regime::BsdeDirect => "bsde-direct",
        }
    }
}

/// Deterministic problems take the Riccati ODE; random coefficients take
/// the fixed-point regression solver unless overridden.
fn select_regime(cfg: &ExperimentConfig, problem: &LQProblem) -> Result<Regime> {
    match cfg.solver_regime() {
        "auto" => Ok(if problem.is_deterministic() {
            Regime::Ode
        } else {
            Regime::FixedPoint
        }),
        "ode" => {
            if problem.is_deterministic() {
                Ok(Regime::Ode)
            } else {
                Err(Error::Config(
                    "solver.regime: ode requires deterministic coefficients".into(),
                ))
            }
        }
        "fixed-point" => Ok(Regime::FixedPoint),
        "bsde" => Ok(Regime::BsdeDirect),
        other => Err(Error::Config(format!(
            "solver.regime: unknown regime '{other}'"
        ))),
    }
}

fn run_solver(
    cfg: &ExperimentConfig,
    problem: &LQProblem,
    grid: &TimeGrid,
    regime: Regime,
) -> Result<RiccatiSolution> {
    match regime {
        Regime::Ode => solve_riccati_ode(problem, grid),
        Regime::FixedPoint => {
            let options = FixedPointOptions {
                max_iters: cfg.max_iters(),
                tol: cfg.solver.tol,
                theta_degree: None,
            };
            theta_fixed_point(
                problem,
                grid,
                cfg.solver_paths(),
                cfg.feature_degree(),
                cfg.require_seed()?,
                &options,
            )
        }
        Regime::BsdeDirect => solve_riccati_bsde_direct(
            problem,
            grid,
            cfg.solver_paths(),
            cfg.feature_degree(),
            cfg.require_seed()?,
        ),
    }
}

/// The pipeline's initial state: `scale` times the leading basis mode.
fn initial_state(problem: &LQProblem, scale: f64) -> DVector<f64> {
    let mut eta = DVector::zeros(problem.basis.modes());
    eta[0] = scale;
    eta
}

fn run_checks(
    cfg: &ExperimentConfig,
    problem: &LQProblem,
    grid: &TimeGrid,
    solution: &RiccatiSolution,
    checks: &[String],
    seed: u64,
) -> Result<Vec<IdentityReport>> {
    let paths = cfg.verify_paths();
    let tol = cfg.verify_tolerance();
    let eta = initial_state(problem, cfg.state_scale());
    let mut reports = Vec::new();
    for name in checks {
        let report = match name.as_str() {
            "transposition" | "hlambda-transposition" => {
                let inputs = TestInputSet::draw(
                    problem,
                    grid,
                    grid.t0(),
                    seed.wrapping_add(1),
                    cfg.input_scale(),
                )?;
                if name == "transposition" {
                    check_transposition_identity(
                        problem, solution, &inputs, grid.t0(), paths, seed, tol,
                    )?
                } else {
                    check_hlambda_transposition(
                        problem, solution, &inputs, grid.t0(), paths, seed, tol,
                    )?
                }
            }
            "value" => check_value_identity(problem, solution, &eta, paths, seed, tol)?,
            "optimality" => check_optimality(
                problem,
                solution,
                &eta,
                cfg.perturbations(),
                paths,
                seed,
                tol,
            )?,
            "cost-decomposition" => {
                let u = vec![DVector::zeros(problem.control_dim); grid.steps()];
                check_cost_decomposition(problem, solution, &u, &eta, paths, seed, tol)?
            }
            "stationarity" => {
                // Synthesized gains satisfy the stationarity relation to
                // numerical precision; fitted gains only to regression
                // accuracy.
                let stol = match solution.representation() {
                    Representation::DeterministicMatrices => 1e-10,
                    Representation::Regression => 1e-3,
                };
                check_stationarity_and_k(problem, solution, 200, seed, stol)?
            }
            other => {
                return Err(Error::Config(format!(
                    "verify.checks: unknown check '{other}'"
                )))
            }
        };
        println!("{}", report.summary_line());
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Serialize)]
struct SolveSummary {
    regime: String,
    modes: usize,
    steps: usize,
    /// Value matrix at the initial time (`W = 0`), row by row.
    p0: Vec<Vec<f64>>,
    k_min_eig: f64,
    dt_budget: f64,
    converged: bool,
    fallback_fits: usize,
    max_condition: f64,
    iterations: Vec<IterationStat>,
}

impl SolveSummary {
    fn new(regime: &str, problem: &LQProblem, grid: &TimeGrid, solution: &RiccatiSolution) -> Self {
        let p0 = solution.p0();
        Self {
            regime: regime.to_string(),
            modes: problem.basis.modes(),
            steps: grid.steps(),
            p0: (0..p0.nrows())
                .map(|i| (0..p0.ncols()).map(|j| p0[(i, j)]).collect())
                .collect(),
            k_min_eig: solution.k_min_eig,
            dt_budget: solution.dt_budget(),
            converged: solution.converged,
            fallback_fits: solution.fallback_fits,
            max_condition: solution.max_condition,
            iterations: solution.iterations.clone(),
        }
    }
}

#[derive(Serialize)]
struct ValueSummary {
    paths: usize,
    cost_mean: f64,
    cost_se: f64,
    /// `1/2 <P(0) eta, eta>`.
    quadratic_form: f64,
    abs_gap: f64,
}
