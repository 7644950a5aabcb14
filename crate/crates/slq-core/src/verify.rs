//! Monte Carlo verification of the characterizing identities of the
//! backward Riccati solution: the two transposition identities, the value
//! formula, the optimality inequality, the cost decomposition, and the
//! stationarity/nonnegativity conditions.
//!
//! Every check produces an [`IdentityReport`] with both sides estimated
//! from per-path functionals (so standard errors are honest), a normalized
//! residual, and a pass flag that accepts either a small residual or
//! statistical agreement within three combined standard errors.

use crate::error::{Error, Result};
use crate::forward::{
    evaluate_cost, flow_map, simulate, Control, FeedbackPolicy, Forcing, PerturbedFeedback,
    TimeGrid,
};
use crate::problem::{mode_damped_gaussian, LQProblem};
use crate::riccati::{compute_kl, RiccatiSolution, K_FLOOR};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Outcome of one identity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `|lhs - rhs| / (|lhs| + |rhs| + 1)`.
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub inputs_digest: String,
    pub extras: BTreeMap<String, f64>,
    pub notes: String,
}

impl IdentityReport {
    /// Builds a report with the standard pass rule: residual below the
    /// tolerance, or two-sided agreement within three combined standard
    /// errors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_estimates(
        identity: &str,
        lhs: (f64, f64),
        rhs: (f64, f64),
        tolerance: f64,
        inputs_digest: String,
        extras: BTreeMap<String, f64>,
        notes: &str,
    ) -> Self {
        let residual = (lhs.0 - rhs.0).abs() / (lhs.0.abs() + rhs.0.abs() + 1.0);
        let pass =
            residual < tolerance || (lhs.0 - rhs.0).abs() < 3.0 * (lhs.1 + rhs.1);
        Self {
            identity: identity.to_string(),
            lhs: lhs.0,
            lhs_se: lhs.1,
            rhs: rhs.0,
            rhs_se: rhs.1,
            residual,
            tolerance,
            pass,
            inputs_digest,
            extras,
            notes: notes.to_string(),
        }
    }

    /// One-line human-readable summary.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<24} {}  lhs {:+.6e} (se {:.1e})  rhs {:+.6e} (se {:.1e})  resid {:.3e} (tol {:.1e})",
            self.identity,
            if self.pass { "PASS" } else { "FAIL" },
            self.lhs,
            self.lhs_se,
            self.rhs,
            self.rhs_se,
            self.residual,
            self.tolerance,
        )
    }
}

fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn digest(identity: &str, problem: &LQProblem, t: f64, steps: usize, paths: usize, seed: u64) -> String {
    format!(
        "id={identity};modes={};control_dim={};t={t:.6};horizon={:.6};steps={steps};paths={paths};seed={seed}",
        problem.basis.modes(),
        problem.control_dim,
        problem.horizon,
    )
}

// ---------------------------------------------------------------------------
// Test inputs
// ---------------------------------------------------------------------------

/// Paired initial states and forcings for the two-trajectory identities.
///
/// Initial states are mode-damped Gaussians (per-mode standard deviation
/// `lambda_j`), drift forcings are piecewise-constant Gaussian sequences
/// with the same damping, and diffusion forcings carry the stronger damping
/// `lambda_j / g_j` consistent with membership in the smooth subspace.
/// Everything is drawn once, deterministically from the seed, and treated
/// as known at the initial time.
#[derive(Debug, Clone)]
pub struct TestInputSet {
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
    pub u1: Vec<DVector<f64>>,
    pub u2: Vec<DVector<f64>>,
    pub v1: Vec<DVector<f64>>,
    pub v2: Vec<DVector<f64>>,
    pub scale: f64,
    pub seed: u64,
}

impl TestInputSet {
    /// Draws a full input set for the suffix of `grid` starting at `t`.
    pub fn draw(problem: &LQProblem, grid: &TimeGrid, t: f64, seed: u64, scale: f64) -> Result<Self> {
        let k0 = grid.index_of(t)?;
        let m = grid.steps() - k0;
        if m == 0 {
            return Err(Error::Contract(
                "test inputs need at least one step before the horizon".into(),
            ));
        }
        let n = problem.basis.modes();
        let lam = problem.basis.lambda_weights();
        let g = problem.basis.graph_norms();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let damped = |weights: &dyn Fn(usize) -> f64, rng: &mut ChaCha8Rng| {
            DVector::from_fn(n, |j, _| {
                let z: f64 = rng.sample(StandardNormal);
                scale * weights(j) * z
            })
        };
        let xi1 = scale * mode_damped_gaussian(&problem.basis, &mut rng);
        let xi2 = scale * mode_damped_gaussian(&problem.basis, &mut rng);
        let state_w = |j: usize| lam[j];
        // Normalized so the leading mode carries state-scale noise while the
        // decay across modes keeps the lambda_j / g_j damping profile.
        let smooth_w = |j: usize| lam[j] * g[0] / g[j];
        let seq = |weights: &dyn Fn(usize) -> f64, rng: &mut ChaCha8Rng| {
            (0..m).map(|_| damped(weights, rng)).collect::<Vec<_>>()
        };
        let u1 = seq(&state_w, &mut rng);
        let u2 = seq(&state_w, &mut rng);
        let v1 = seq(&smooth_w, &mut rng);
        let v2 = seq(&smooth_w, &mut rng);
        Ok(Self {
            xi1,
            xi2,
            u1,
            u2,
            v1,
            v2,
            scale,
            seed,
        })
    }

    /// Same initial states with all forcings set to zero.
    pub fn without_forcings(mut self) -> Self {
        for f in [&mut self.u1, &mut self.u2, &mut self.v1, &mut self.v2] {
            for v in f.iter_mut() {
                v.fill(0.0);
            }
        }
        self
    }

    /// Swaps the roles of the two trajectories.
    pub fn swapped(self) -> Self {
        Self {
            xi1: self.xi2,
            xi2: self.xi1,
            u1: self.u2,
            u2: self.u1,
            v1: self.v2,
            v2: self.v1,
            ..self
        }
    }

    fn steps(&self) -> usize {
        self.u1.len()
    }
}

// ---------------------------------------------------------------------------
// Shared per-step solution data
// ---------------------------------------------------------------------------

/// Per-step solution and coefficient data along one path, with a cached
/// variant when neither depends on the Brownian value.
struct StepData {
    snap: crate::problem::CoefficientSnapshot,
    p: DMatrix<f64>,
    lam: DMatrix<f64>,
    theta: DMatrix<f64>,
    k_chol: Cholesky<f64, nalgebra::Dyn>,
    k_mat: DMatrix<f64>,
}

fn step_data(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    kg: usize,
    tau: f64,
    w: f64,
) -> Result<StepData> {
    let snap = problem.snapshot(tau, w)?;
    let p = solution.p_at(kg, w);
    let lam = solution.lambda_at(kg, w);
    let theta = solution.theta_at(kg, w);
    let (k_mat, _) = compute_kl(&p, &lam, &snap);
    let c = k_mat.nrows();
    if Cholesky::new(&k_mat - DMatrix::identity(c, c) * K_FLOOR).is_none() {
        return Err(Error::SingularK(format!(
            "control weight K fell below the positivity floor at t = {tau:.6}"
        )));
    }
    let k_chol = Cholesky::new(k_mat.clone())
        .ok_or_else(|| Error::SingularK(format!("K not positive definite at t = {tau:.6}")))?;
    Ok(StepData {
        snap,
        p,
        lam,
        theta,
        k_chol,
        k_mat,
    })
}

enum StepSource {
    /// Deterministic problem and solution: one entry per suffix step.
    Cached(Vec<StepData>),
    Live,
}

impl StepSource {
    /// Prepares per-node data for nodes `0..=nodes` of the suffix grid.
    fn prepare(
        problem: &LQProblem,
        solution: &RiccatiSolution,
        suffix: &TimeGrid,
        k0: usize,
        nodes: usize,
    ) -> Result<Self> {
        use crate::riccati::Representation;
        if problem.is_deterministic()
            && solution.representation() == Representation::DeterministicMatrices
        {
            let data = (0..=nodes)
                .map(|k| step_data(problem, solution, k0 + k, suffix.time(k), 0.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(StepSource::Cached(data))
        } else {
            Ok(StepSource::Live)
        }
    }

    fn with<R>(
        &self,
        problem: &LQProblem,
        solution: &RiccatiSolution,
        k0: usize,
        suffix: &TimeGrid,
        k: usize,
        w: f64,
        f: impl FnOnce(&StepData) -> R,
    ) -> Result<R> {
        match self {
            StepSource::Cached(data) => Ok(f(&data[k])),
            StepSource::Live => {
                let data = step_data(problem, solution, k0 + k, suffix.time(k), w)?;
                Ok(f(&data))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transposition identities
// ---------------------------------------------------------------------------

/// Everything the identity integrands need at one grid node of one path.
struct NodeEval {
    /// State-only integrand (the whole left-hand running term).
    dl: f64,
    px1: DVector<f64>,
    px2: DVector<f64>,
    /// `P C x_i` for the open-loop identity, `P C_Theta x_i` closed-loop.
    pcx1: DVector<f64>,
    pcx2: DVector<f64>,
    lamx1: DVector<f64>,
    lamx2: DVector<f64>,
    p: DMatrix<f64>,
}

impl NodeEval {
    fn new(sd: &StepData, x1: &DVector<f64>, x2: &DVector<f64>, closed_loop: bool) -> Self {
        let (dl, cx1, cx2) = if closed_loop {
            let th_x1 = &sd.theta * x1;
            let th_x2 = &sd.theta * x2;
            let dl = (&sd.snap.q * x1).dot(x2) + (&sd.snap.r * &th_x1).dot(&th_x2);
            let cx1 = &sd.snap.c * x1 + &sd.snap.d * th_x1;
            let cx2 = &sd.snap.c * x2 + &sd.snap.d * th_x2;
            (dl, cx1, cx2)
        } else {
            let cx1 = &sd.snap.c * x1;
            let cx2 = &sd.snap.c * x2;
            let l1 = (&sd.snap.b.transpose() * &sd.p) * x1
                + sd.snap.d.transpose() * (&sd.p * &cx1 + &sd.lam * x1);
            let l2 = (&sd.snap.b.transpose() * &sd.p) * x2
                + sd.snap.d.transpose() * (&sd.p * &cx2 + &sd.lam * x2);
            let kinv_l1 = sd.k_chol.solve(&l1);
            let dl = (&sd.snap.q * x1).dot(x2) - kinv_l1.dot(&l2);
            (dl, cx1, cx2)
        };
        NodeEval {
            dl,
            px1: &sd.p * x1,
            px2: &sd.p * x2,
            pcx1: &sd.p * cx1,
            pcx2: &sd.p * cx2,
            lamx1: &sd.lam * x1,
            lamx2: &sd.lam * x2,
            p: sd.p.clone(),
        }
    }

    /// The six forcing cross-terms of the right-hand side, with this node's
    /// continuous factors and the given interval's forcing values.
    fn cross(
        &self,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        v1: &DVector<f64>,
        v2: &DVector<f64>,
    ) -> f64 {
        self.px2.dot(u1)
            + self.px1.dot(u2)
            + self.pcx1.dot(v2)
            + v1.dot(&(&self.pcx2 + &self.p * v2))
            + v1.dot(&self.lamx2)
            + self.lamx1.dot(v2)
    }
}

/// Shared Monte Carlo core of the two transposition identities: simulates
/// the forced pair under common noise and accumulates both sides per path.
///
/// Time quadrature: the state-only running term uses the trapezoid rule in
/// the continuous factors, while the forcing cross-terms hold each interval's
/// piecewise-constant forcing fixed and average only the continuous factors
/// over the interval endpoints (forcings jump at nodes, so a plain node rule
/// would pair interval k's forcing with interval k+1's value).
#[allow(clippy::too_many_arguments)]
fn two_trajectory_sides(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    inputs: &TestInputSet,
    t: f64,
    paths: usize,
    seed: u64,
    closed_loop: bool,
) -> Result<Vec<Result<(f64, f64)>>> {
    let grid = solution.grid().clone();
    let k0 = grid.index_of(t)?;
    let suffix = grid.suffix_from(t)?;
    check_input_alignment(inputs, &suffix, problem)?;

    let policy: &dyn FeedbackPolicy = solution;
    let control = if closed_loop {
        Control::Feedback(policy)
    } else {
        Control::Zero
    };
    let b1 = simulate(
        problem,
        &suffix,
        &inputs.xi1,
        &control,
        Some(&Forcing::Shared(&inputs.u1)),
        Some(&Forcing::Shared(&inputs.v1)),
        paths,
        seed,
    )?;
    let b2 = simulate(
        problem,
        &suffix,
        &inputs.xi2,
        &control,
        Some(&Forcing::Shared(&inputs.u2)),
        Some(&Forcing::Shared(&inputs.v2)),
        paths,
        seed,
    )?;

    let steps = StepSource::prepare(problem, solution, &suffix, k0, suffix.steps())?;
    let dt = suffix.dt();
    let m = suffix.steps();
    Ok((0..paths)
        .into_par_iter()
        .map(|i| {
            let w = &b1.w[i];
            let x1t = &b1.states[i][m];
            let x2t = &b2.states[i][m];
            let g = problem.terminal_g(w[m]);
            let mut lhs = (&g * x1t).dot(x2t);
            let mut rhs = {
                let p0 = solution.p_at(k0, w[0]);
                (&p0 * &inputs.xi1).dot(&inputs.xi2)
            };
            let mut prev: Option<NodeEval> = None;
            for k in 0..=m {
                let x1 = &b1.states[i][k];
                let x2 = &b2.states[i][k];
                let cur = steps.with(problem, solution, k0, &suffix, k, w[k], |sd| {
                    NodeEval::new(sd, x1, x2, closed_loop)
                })?;
                let weight = if k == 0 || k == m { 0.5 * dt } else { dt };
                lhs += cur.dl * weight;
                if let Some(prev) = &prev {
                    let kf = k - 1;
                    let u1 = &inputs.u1[kf];
                    let u2 = &inputs.u2[kf];
                    let v1 = &inputs.v1[kf];
                    let v2 = &inputs.v2[kf];
                    rhs += 0.5 * dt * (prev.cross(u1, u2, v1, v2) + cur.cross(u1, u2, v1, v2));
                }
                prev = Some(cur);
            }
            Ok((lhs, rhs))
        })
        .collect())
}

/// Verifies the defining identity of the Riccati solution pair: two
/// independently forced trajectories driven by common noise must couple
/// through `(P, Lambda)` so that
///
/// ```text
/// E<G x1(T), x2(T)> + E int <Q x1, x2> - E int <K^{-1} L x1, L x2>
///   = E<P(t) xi1, xi2> + forcing cross-terms.
/// ```
pub fn check_transposition_identity(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    inputs: &TestInputSet,
    t: f64,
    paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    let sides = two_trajectory_sides(problem, solution, inputs, t, paths, seed, false)?;
    report_two_sided(
        "transposition",
        sides,
        tolerance,
        digest(
            "transposition",
            problem,
            t,
            solution.grid().steps(),
            paths,
            seed,
        ),
        "two forced trajectories under common noise; both sides per-path",
    )
}

/// Verifies the closed-loop transposition identity: with the gain folded
/// into the dynamics (`A1 + B Theta`, `C + D Theta`) and the running weight
/// `Q + Theta* R Theta`, the `K^{-1}` term disappears and `(P, Lambda)`
/// couples the forced closed-loop trajectories.
pub fn check_hlambda_transposition(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    inputs: &TestInputSet,
    t: f64,
    paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    let sides = two_trajectory_sides(problem, solution, inputs, t, paths, seed, true)?;
    report_two_sided(
        "hlambda-transposition",
        sides,
        tolerance,
        digest(
            "hlambda-transposition",
            problem,
            t,
            solution.grid().steps(),
            paths,
            seed,
        ),
        "closed-loop forced trajectories under common noise; both sides per-path",
    )
}

fn check_input_alignment(
    inputs: &TestInputSet,
    suffix: &TimeGrid,
    problem: &LQProblem,
) -> Result<()> {
    let n = problem.basis.modes();
    if inputs.steps() != suffix.steps() {
        return Err(Error::Contract(format!(
            "test inputs cover {} steps but the suffix grid has {}",
            inputs.steps(),
            suffix.steps()
        )));
    }
    if inputs.xi1.len() != n || inputs.xi2.len() != n {
        return Err(Error::Contract(
            "test input initial states must live in the mode space".into(),
        ));
    }
    Ok(())
}

fn report_two_sided(
    identity: &str,
    sides: Vec<Result<(f64, f64)>>,
    tolerance: f64,
    inputs_digest: String,
    notes: &str,
) -> Result<IdentityReport> {
    let mut lhs = Vec::with_capacity(sides.len());
    let mut rhs = Vec::with_capacity(sides.len());
    for item in sides {
        let (l, r) = item?;
        lhs.push(l);
        rhs.push(r);
    }
    Ok(IdentityReport::from_estimates(
        identity,
        mean_se(&lhs),
        mean_se(&rhs),
        tolerance,
        inputs_digest,
        BTreeMap::new(),
        notes,
    ))
}

// ---------------------------------------------------------------------------
// Value formula
// ---------------------------------------------------------------------------

/// Verifies the value formula: the Monte Carlo cost of the closed loop
/// started at `eta` equals `1/2 <P(0) eta, eta>`.
pub fn check_value_identity(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    eta: &DVector<f64>,
    paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    let grid = solution.grid().clone();
    let bundle = flow_map(problem, solution, &grid, grid.t0(), eta, paths, seed)?;
    let cost = evaluate_cost(problem, &bundle, None, false)?;
    let rhs = 0.5 * (solution.p0() * eta).dot(eta);
    Ok(IdentityReport::from_estimates(
        "value",
        (cost.mean, cost.std_error),
        (rhs, 0.0),
        tolerance,
        digest("value", problem, grid.t0(), grid.steps(), paths, seed),
        BTreeMap::new(),
        "closed-loop Monte Carlo cost vs quadratic form of P(0)",
    ))
}

// ---------------------------------------------------------------------------
// Optimality inequality
// ---------------------------------------------------------------------------

/// Verifies optimality of the synthesized feedback: every perturbed control
/// `u = Theta x + delta * phi` must cost at least the closed loop, up to
/// three standard errors of the per-path cost difference (common random
/// numbers keep that difference tight).
#[allow(clippy::too_many_arguments)]
pub fn check_optimality(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    eta: &DVector<f64>,
    perturbations: usize,
    paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    if perturbations == 0 {
        return Err(Error::Contract("at least one perturbation draw required".into()));
    }
    let grid = solution.grid().clone();
    let base = flow_map(problem, solution, &grid, grid.t0(), eta, paths, seed)?;
    let base_cost = evaluate_cost(problem, &base, None, true)?;
    let base_per_path = base_cost.per_path.as_ref().expect("per-path kept");

    let deltas = [0.1, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut worst = f64::INFINITY;
    let mut worst_se = 0.0;
    let mut all_pass = true;
    let mut extras = BTreeMap::new();
    for j in 0..perturbations {
        let delta = deltas[j % deltas.len()];
        let offsets: Vec<DVector<f64>> = (0..grid.steps())
            .map(|_| {
                DVector::from_fn(problem.control_dim, |_, _| rng.random_range(-1.0..1.0))
            })
            .collect();
        let policy = PerturbedFeedback {
            base: solution,
            offsets: &offsets,
            scale: delta,
        };
        let bundle = simulate(
            problem,
            &grid,
            eta,
            &Control::Feedback(&policy),
            None,
            None,
            paths,
            seed,
        )?;
        let cost = evaluate_cost(problem, &bundle, None, true)?;
        let per_path = cost.per_path.as_ref().expect("per-path kept");
        let diffs: Vec<f64> = per_path
            .iter()
            .zip(base_per_path)
            .map(|(a, b)| a - b)
            .collect();
        let (margin, se) = mean_se(&diffs);
        if margin < worst {
            worst = margin;
            worst_se = se;
        }
        let key = format!("margin_delta_{delta}");
        let better = extras.get(&key).map_or(true, |&m| margin < m);
        if better {
            extras.insert(key, margin);
            extras.insert(format!("se_delta_{delta}"), se);
        }
        if margin < -3.0 * se {
            all_pass = false;
        }
    }
    extras.insert("draws".into(), perturbations as f64);
    extras.insert("margin_min".into(), worst);
    extras.insert("margin_min_se".into(), worst_se);
    extras.insert("baseline_cost".into(), base_cost.mean);

    let residual = (-worst).max(0.0) / (base_cost.mean.abs() + 1.0);
    Ok(IdentityReport {
        identity: "optimality".into(),
        lhs: worst,
        lhs_se: worst_se,
        rhs: 0.0,
        rhs_se: 0.0,
        residual,
        tolerance,
        pass: all_pass,
        inputs_digest: digest("optimality", problem, grid.t0(), grid.steps(), paths, seed),
        extras,
        notes: "worst excess cost of perturbed controls vs the closed loop (common random numbers)"
            .into(),
    })
}

// ---------------------------------------------------------------------------
// Cost decomposition
// ---------------------------------------------------------------------------

/// Verifies the exact cost decomposition: for any open-loop control,
/// `2 J(u) = E<P(0) xi, xi> + E int <K (u - Theta y), u - Theta y>` along
/// the controlled trajectory `y`.
#[allow(clippy::too_many_arguments)]
pub fn check_cost_decomposition(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    u: &[DVector<f64>],
    xi: &DVector<f64>,
    paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    let grid = solution.grid().clone();
    if u.len() != grid.steps() {
        return Err(Error::Contract(format!(
            "open-loop control covers {} steps but the grid has {}",
            u.len(),
            grid.steps()
        )));
    }
    let k0 = 0usize;
    let bundle = simulate(
        problem,
        &grid,
        xi,
        &Control::OpenLoop(u),
        None,
        None,
        paths,
        seed,
    )?;
    let cost = evaluate_cost(problem, &bundle, None, true)?;
    let per_path = cost.per_path.as_ref().expect("per-path kept");

    let steps = StepSource::prepare(problem, solution, &grid, k0, grid.steps())?;
    let dt = grid.dt();
    let m = grid.steps();
    let rhs_sides: Vec<Result<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let w = &bundle.w[i];
            let mut rhs = {
                let p0 = solution.p_at(k0, w[0]);
                (&p0 * xi).dot(xi)
            };
            for k in 0..m {
                let y = &bundle.states[i][k];
                rhs += steps.with(problem, solution, k0, &grid, k, w[k], |sd| {
                    let diff = &u[k] - &sd.theta * y;
                    (&sd.k_mat * &diff).dot(&diff)
                })? * dt;
            }
            Ok(rhs)
        })
        .collect();
    let mut rhs_vals = Vec::with_capacity(paths);
    for item in rhs_sides {
        rhs_vals.push(item?);
    }
    let lhs_vals: Vec<f64> = per_path.iter().map(|c| 2.0 * c).collect();
    Ok(IdentityReport::from_estimates(
        "cost-decomposition",
        mean_se(&lhs_vals),
        mean_se(&rhs_vals),
        tolerance,
        digest("cost-decomposition", problem, grid.t0(), m, paths, seed),
        BTreeMap::new(),
        "twice the open-loop cost vs initial quadratic form plus weighted control mismatch",
    ))
}

// ---------------------------------------------------------------------------
// Stationarity and K-positivity
// ---------------------------------------------------------------------------

/// Verifies the pointwise stationarity condition `K Theta + L = 0` and the
/// nonnegativity of `K` over sampled `(t, w)` pairs: all grid times at the
/// central Brownian value, plus random draws from the Brownian law at a
/// random grid time, truncated to 2.5 standard deviations (the statistically
/// supported design region of the regression fits).
pub fn check_stationarity_and_k(
    problem: &LQProblem,
    solution: &RiccatiSolution,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    let grid = solution.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut points: Vec<(usize, f64)> = (0..grid.steps()).map(|k| (k, 0.0)).collect();
    for _ in 0..samples {
        let k = rng.random_range(0..grid.steps());
        let mut z: f64 = rng.sample(StandardNormal);
        while z.abs() > 2.5 {
            z = rng.sample(StandardNormal);
        }
        points.push((k, grid.time(k).sqrt() * z));
    }

    let mut worst_resid: f64 = 0.0;
    let mut worst_at = (0.0, 0.0);
    let mut min_k_eig = f64::INFINITY;
    for (k, w) in points {
        let tau = grid.time(k);
        let snap = problem.snapshot(tau, w)?;
        let p = solution.p_at(k, w);
        let lam = solution.lambda_at(k, w);
        let theta = solution.theta_at(k, w);
        let (k_mat, l) = compute_kl(&p, &lam, &snap);
        let resid = (&k_mat * &theta + &l).norm() / (1.0 + l.norm());
        if resid > worst_resid {
            worst_resid = resid;
            worst_at = (tau, w);
        }
        let eig = k_mat
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        min_k_eig = min_k_eig.min(eig);
    }

    let pass = worst_resid < tolerance && min_k_eig >= -1e-8;
    let mut extras = BTreeMap::new();
    extras.insert("min_k_eig".into(), min_k_eig);
    extras.insert("worst_t".into(), worst_at.0);
    extras.insert("worst_w".into(), worst_at.1);
    extras.insert("samples".into(), samples as f64);
    Ok(IdentityReport {
        identity: "stationarity".into(),
        lhs: worst_resid,
        lhs_se: 0.0,
        rhs: 0.0,
        rhs_se: 0.0,
        residual: worst_resid,
        tolerance,
        pass,
        inputs_digest: digest(
            "stationarity",
            problem,
            grid.t0(),
            grid.steps(),
            samples,
            seed,
        ),
        extras,
        notes: "sup of |K Theta + L| / (1 + |L|) with min eig K; samples within 2.5 sigma".into(),
    })
}

/// Renders reports as an aligned human-readable table.
pub fn summary_table(reports: &[IdentityReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.summary_line());
        out.push('\n');
    }
    out
}
