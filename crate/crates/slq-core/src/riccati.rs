//! Backward Riccati solvers.
//!
//! Three routes to the pair `(P, Lambda)` of the backward Riccati equation
//! and its feedback gain `Theta = -K^{-1} L`:
//!
//! * [`solve_riccati_ode`] — deterministic coefficients only; classical
//!   matrix Riccati ODE integrated backward with fourth-order Runge–Kutta
//!   steps (internally substepped for stiff spectral modes) and `Lambda = 0`.
//! * [`theta_fixed_point`] — Picard iteration that alternates a linear
//!   backward equation for `(P, Lambda)` under a frozen gain with the gain
//!   update `Theta = -K^{-1} L`, all on one reused Brownian path cloud.
//! * [`solve_riccati_bsde_direct`] — single backward regression sweep with
//!   the full nonlinear driver evaluated at the current conditional
//!   expectation estimates.
//!
//! The stochastic solvers represent `P(t, .)`, `Lambda(t, .)` and the gain
//! as per-step polynomial regressions in the Brownian value (see
//! [`crate::regression`]); the unbounded operator `A` is handled exactly by
//! two-sided multiplication with the semigroup factors over each step, so
//! the explicit part of the update only sees the bounded coefficients.

use crate::error::{Error, Result};
use crate::forward::{map_paths, FeedbackPolicy, TimeGrid};
use crate::problem::{symmetrize, CoefficientProcess, CoefficientSnapshot, LQProblem};
use crate::regression::RegressionModel;
use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

/// Strict positivity floor for `K = R + D* P D`; anything below counts as
/// singular and aborts with a witness.
pub const K_FLOOR: f64 = 1e-8;

/// How a solution field is stored over the time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Representation {
    /// One matrix per grid node (deterministic coefficients).
    DeterministicMatrices,
    /// One regression model per grid node (random coefficients).
    Regression,
}

/// A time-indexed matrix field: zero, a matrix per step, or a regression
/// model per step.
#[derive(Debug, Clone)]
pub enum MatrixField {
    Zero { rows: usize, cols: usize },
    Det(Vec<DMatrix<f64>>),
    Reg(Vec<RegressionModel>),
}

impl MatrixField {
    /// Value at grid index `k` and Brownian value `w`.
    ///
    /// `Det` fields may store one extra terminal entry; indexing past the
    /// stored range clamps to the last entry (gains are only ever queried
    /// strictly before the horizon).
    pub fn at(&self, k: usize, w: f64) -> DMatrix<f64> {
        match self {
            MatrixField::Zero { rows, cols } => DMatrix::zeros(*rows, *cols),
            MatrixField::Det(mats) => mats[k.min(mats.len() - 1)].clone(),
            MatrixField::Reg(models) => models[k.min(models.len() - 1)].predict(w),
        }
    }

    /// Number of stored steps (0 for the zero field).
    pub fn len(&self) -> usize {
        match self {
            MatrixField::Zero { .. } => 0,
            MatrixField::Det(mats) => mats.len(),
            MatrixField::Reg(models) => models.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Root-mean-square Frobenius distance to `other` at index `k` over the
    /// probe points.
    fn rms_delta_at(&self, other: &MatrixField, k: usize, probes: &[f64]) -> f64 {
        if probes.is_empty() {
            return 0.0;
        }
        let sum: f64 = probes
            .iter()
            .map(|&w| (self.at(k, w) - other.at(k, w)).norm_squared())
            .sum();
        (sum / probes.len() as f64).sqrt()
    }
}

/// One Picard iteration record of [`theta_fixed_point`].
#[derive(Debug, Clone, Serialize)]
pub struct IterationStat {
    pub iteration: usize,
    /// Max over grid steps of the RMS gain change on probe points.
    pub delta: f64,
    /// Smallest `K` eigenvalue seen while synthesizing the gain update.
    pub min_k_eig: f64,
}

/// Options for the Picard iteration.
#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub max_iters: usize,
    /// Convergence tolerance on the gain change; `None` selects 1e-6 for
    /// deterministic problems and 1e-3 for random coefficients.
    pub tol: Option<f64>,
    /// Polynomial degree for the fitted gain; `None` selects the value
    /// field degree plus six. The pointwise gain targets `-K^{-1} L` are
    /// noise-free functions of the fitted fields, so a generous degree
    /// shrinks the stationarity residual without a variance penalty.
    pub theta_degree: Option<usize>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: None,
            theta_degree: None,
        }
    }
}

/// Solution of the backward Riccati system on a time grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    representation: Representation,
    p: MatrixField,
    lambda: MatrixField,
    theta: MatrixField,
    g: CoefficientProcess,
    horizon: f64,
    /// Smallest eigenvalue of `K` observed across recorded evaluations.
    pub k_min_eig: f64,
    /// Picard iteration history (empty for single-sweep solvers).
    pub iterations: Vec<IterationStat>,
    /// False only when the Picard iteration hit `max_iters` without meeting
    /// the tolerance; the returned fields are then the last iterate.
    pub converged: bool,
    /// Regression fits that had to reduce their polynomial degree.
    pub fallback_fits: usize,
    /// Worst conditioning estimate among the regression fits.
    pub max_condition: f64,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// `P(t_k, w)`. At the terminal index this returns the exact terminal
    /// condition `G(w)` rather than any fitted value.
    pub fn p_at(&self, k: usize, w: f64) -> DMatrix<f64> {
        if k >= self.grid.steps() {
            return symmetrize(&self.g.eval(self.horizon, w));
        }
        self.p.at(k, w)
    }

    /// `Lambda(t_k, w)` for `k < steps` (identically zero in the
    /// deterministic regime).
    pub fn lambda_at(&self, k: usize, w: f64) -> DMatrix<f64> {
        self.lambda.at(k, w)
    }

    /// Feedback gain at grid index `k < steps`.
    pub fn theta_at(&self, k: usize, w: f64) -> DMatrix<f64> {
        self.theta.at(k, w)
    }

    /// `P(0)` (the Brownian value is zero at time zero).
    pub fn p0(&self) -> DMatrix<f64> {
        self.p_at(0, 0.0)
    }

    /// Largest step-to-step change of `P(., 0)`, i.e. a grid estimate of
    /// `dt * sup ||dP/dt||`; used as the discretization budget in
    /// cross-solver comparisons.
    pub fn dt_budget(&self) -> f64 {
        (0..self.grid.steps())
            .map(|k| (self.p_at(k + 1, 0.0) - self.p_at(k, 0.0)).norm())
            .fold(0.0, f64::max)
    }

    pub fn theta_field(&self) -> &MatrixField {
        &self.theta
    }
}

impl FeedbackPolicy for RiccatiSolution {
    fn gain(&self, t: f64, w: f64) -> DMatrix<f64> {
        let k = ((t - self.grid.t0()) / self.grid.dt()).round() as i64;
        let k = k.clamp(0, self.grid.steps() as i64 - 1) as usize;
        self.theta.at(k, w)
    }
}

/// `K = R + D* P D` and `L = B* P + D* (P C + Lambda)`.
pub fn compute_kl(
    p: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    snap: &CoefficientSnapshot,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = symmetrize(&(&snap.r + snap.d.transpose() * p * &snap.d));
    let l = snap.b.transpose() * p + snap.d.transpose() * (p * &snap.c + lambda);
    (k, l)
}

/// Feedback gain `Theta = -K^{-1} L`, rejecting `K` whose smallest
/// eigenvalue sits below [`K_FLOOR`].
pub fn synthesize_feedback(
    p: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    snap: &CoefficientSnapshot,
) -> Result<DMatrix<f64>> {
    let (k_mat, l) = compute_kl(p, lambda, snap);
    solve_gain(&k_mat, &l)
}

/// Solves `K Theta = -L` behind the positivity floor.
fn solve_gain(k_mat: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = k_mat.nrows();
    let shifted = k_mat - DMatrix::identity(c, c) * K_FLOOR;
    if Cholesky::new(shifted).is_none() {
        return Err(Error::SingularK(format!(
            "control weight K has an eigenvalue below {K_FLOOR:.0e}"
        )));
    }
    let chol = Cholesky::new(k_mat.clone()).ok_or_else(|| {
        Error::SingularK("control weight K is not positive definite".into())
    })?;
    Ok(-chol.solve(l))
}

fn min_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Applies `exp(A dt) M exp(A dt)` with the diagonal semigroup factors.
fn conjugate_semigroup(m: &DMatrix<f64>, factors: &[f64]) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |r, c| factors[r] * m[(r, c)] * factors[c])
}

fn require_solver_grid(grid: &TimeGrid) -> Result<()> {
    if grid.t0() != 0.0 {
        return Err(Error::Contract(
            "Riccati solvers integrate over the full interval: the grid must start at time zero"
                .into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Deterministic Riccati ODE
// ---------------------------------------------------------------------------

/// Riccati driver `dP/dt` for deterministic coefficients (`Lambda = 0`),
/// with `A` entering through its diagonal eigenvalues.
fn ode_rhs(
    p: &DMatrix<f64>,
    snap: &CoefficientSnapshot,
    mu: &[f64],
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    // P (A + A1) with diagonal A.
    let mut pa = p * &snap.a1;
    for c in 0..n {
        for r in 0..n {
            pa[(r, c)] += p[(r, c)] * mu[c];
        }
    }
    let (k_mat, l) = compute_kl(p, &DMatrix::zeros(n, n), snap);
    let gain_term = match solve_gain(&k_mat, &l) {
        Ok(theta) => -l.transpose() * theta, // L^T K^{-1} L = -L^T Theta
        Err(Error::SingularK(msg)) => {
            return Err(Error::SingularK(format!("{msg} (at t = {t:.6})")))
        }
        Err(e) => return Err(e),
    };
    let sum = &pa
        + pa.transpose()
        + snap.c.transpose() * p * &snap.c
        + &snap.q
        - gain_term;
    Ok(-sum)
}

/// Integrates the deterministic backward Riccati ODE with classical
/// fourth-order Runge–Kutta steps, symmetrizing after every step.
///
/// Each grid interval is internally substepped so that the stiffest
/// spectral mode stays well inside the explicit stability region; the
/// reported solution still lives on the caller's grid.
pub fn solve_riccati_ode(problem: &LQProblem, grid: &TimeGrid) -> Result<RiccatiSolution> {
    if !problem.is_deterministic() {
        return Err(Error::Contract(
            "solve_riccati_ode requires deterministic coefficients; use the regression solvers"
                .into(),
        ));
    }
    require_solver_grid(grid)?;
    let n = problem.basis.modes();
    let mu = problem.basis.eigenvalues().to_vec();
    let mu_max = mu.iter().fold(0.0f64, |a, &m| a.max(m.abs()));
    let dt = grid.dt();
    let n_sub = ((dt * (2.0 * mu_max + 10.0) / 0.8).ceil() as usize).max(1);
    let h = dt / n_sub as f64;

    let mut p = problem.terminal_g(0.0);
    let mut stored = vec![DMatrix::zeros(n, n); grid.steps() + 1];
    stored[grid.steps()] = p.clone();
    for k in (0..grid.steps()).rev() {
        for s in 0..n_sub {
            let t_hi = grid.time(k + 1) - s as f64 * h;
            let rhs = |tau: f64, q: &DMatrix<f64>| -> Result<DMatrix<f64>> {
                let snap = problem.snapshot(tau.max(0.0), 0.0)?;
                ode_rhs(q, &snap, &mu, tau)
            };
            // Backward step of size h: tau runs from t_hi to t_hi - h.
            let k1 = rhs(t_hi, &p)?;
            let k2 = rhs(t_hi - 0.5 * h, &(&p - &k1 * (0.5 * h)))?;
            let k3 = rhs(t_hi - 0.5 * h, &(&p - &k2 * (0.5 * h)))?;
            let k4 = rhs(t_hi - h, &(&p - &k3 * h))?;
            p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            p = symmetrize(&p);
        }
        stored[k] = p.clone();
    }

    // Gain on every step interval plus the K diagnostics over all nodes.
    let mut k_min_eig = f64::INFINITY;
    let mut theta = Vec::with_capacity(grid.steps());
    for k in 0..=grid.steps() {
        let snap = problem.snapshot(grid.time(k), 0.0)?;
        let (k_mat, l) = compute_kl(&stored[k], &DMatrix::zeros(n, n), &snap);
        k_min_eig = k_min_eig.min(min_symmetric_eig(&k_mat));
        if k < grid.steps() {
            let gain = solve_gain(&k_mat, &l).map_err(|e| match e {
                Error::SingularK(msg) => {
                    Error::SingularK(format!("{msg} (at t = {:.6})", grid.time(k)))
                }
                other => other,
            })?;
            theta.push(gain);
        }
    }

    Ok(RiccatiSolution {
        grid: grid.clone(),
        representation: Representation::DeterministicMatrices,
        p: MatrixField::Det(stored),
        lambda: MatrixField::Zero { rows: n, cols: n },
        theta: MatrixField::Det(theta),
        g: problem.g.clone(),
        horizon: problem.horizon,
        k_min_eig,
        iterations: Vec::new(),
        converged: true,
        fallback_fits: 0,
        max_condition: 1.0,
    })
}

// ---------------------------------------------------------------------------
// Brownian path cloud
// ---------------------------------------------------------------------------

/// Forward-simulated Brownian paths reused across backward sweeps and
/// Picard iterations (freezing the sampling noise of the fixed point).
#[derive(Debug, Clone)]
pub struct BrownianCloud {
    /// Brownian values per path, length `steps + 1`.
    pub w: Vec<Vec<f64>>,
    /// Increments per path, length `steps`.
    pub incs: Vec<Vec<f64>>,
    pub seed: u64,
}

impl BrownianCloud {
    pub fn paths(&self) -> usize {
        self.w.len()
    }

    /// Deterministic probe subset of path indices (at most 64).
    fn probe_indices(&self) -> Vec<usize> {
        let paths = self.paths();
        let stride = (paths / 64).max(1);
        (0..paths).step_by(stride).collect()
    }

    /// Brownian values of the probe paths at step `k`.
    fn probes_at(&self, k: usize) -> Vec<f64> {
        self.probe_indices().iter().map(|&i| self.w[i][k]).collect()
    }
}

/// Draws `paths` Brownian paths on `grid` (grid must start at time zero).
pub fn brownian_cloud(grid: &TimeGrid, paths: usize, seed: u64) -> Result<BrownianCloud> {
    require_solver_grid(grid)?;
    if paths == 0 {
        return Err(Error::Contract("a Brownian cloud needs at least one path".into()));
    }
    let drawn = map_paths(paths, seed, |_, rng| {
        let (w0, incs) = crate::forward::draw_brownian(grid, rng);
        let mut w = Vec::with_capacity(incs.len() + 1);
        w.push(w0);
        for (k, dw) in incs.iter().enumerate() {
            w.push(w[k] + dw);
        }
        Ok((w, incs))
    })?;
    let mut w = Vec::with_capacity(paths);
    let mut incs = Vec::with_capacity(paths);
    for (wv, iv) in drawn {
        w.push(wv);
        incs.push(iv);
    }
    Ok(BrownianCloud { w, incs, seed })
}

// ---------------------------------------------------------------------------
// Regression backward sweeps
// ---------------------------------------------------------------------------

/// Accumulated fit diagnostics of one backward sweep.
struct SweepDiag {
    k_min_eig: f64,
    fallback_fits: usize,
    max_condition: f64,
}

fn check_path_budget(paths: usize, degree: usize) -> Result<()> {
    let need = 10 * (degree + 1);
    if paths < need {
        return Err(Error::Contract(format!(
            "regression with degree {degree} needs at least {need} paths, got {paths}"
        )));
    }
    Ok(())
}

/// Linear Lyapunov driver under a frozen gain: with `A_T = A1 + B Theta`
/// and `C_T = C + D Theta`,
/// `P A_T + A_T* P + C_T* P C_T + C_T* Lambda + Lambda C_T + Q + Theta* R Theta`
/// (the semigroup conjugation supplies the unbounded `A` part).
fn lyapunov_driver(
    p: &DMatrix<f64>,
    lam: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    snap: &CoefficientSnapshot,
) -> DMatrix<f64> {
    let a_t = &snap.a1 + &snap.b * theta;
    let c_t = &snap.c + &snap.d * theta;
    let pa = p * &a_t;
    let cpc = c_t.transpose() * p * &c_t;
    let cl = c_t.transpose() * lam;
    &pa + pa.transpose() + cpc + &cl + cl.transpose() + &snap.q + theta.transpose() * &snap.r * theta
}

/// Full nonlinear Riccati driver
/// `P A1 + A1* P + Lambda C + C* Lambda + C* P C + Q - L* K^{-1} L`
/// evaluated at the current `(P, Lambda)` estimates (again without the `A`
/// part, which the conjugation handles).
fn bsre_driver(
    p: &DMatrix<f64>,
    lam: &DMatrix<f64>,
    snap: &CoefficientSnapshot,
) -> Result<DMatrix<f64>> {
    let (k_mat, l) = compute_kl(p, lam, snap);
    let theta = solve_gain(&k_mat, &l)?;
    let pa = p * &snap.a1;
    let lc = lam * &snap.c;
    Ok(&pa + pa.transpose()
        + &lc
        + lc.transpose()
        + snap.c.transpose() * p * &snap.c
        + &snap.q
        + l.transpose() * theta)
}

/// One backward regression sweep for the linear Lyapunov equation under the
/// frozen gain field `theta`. Returns per-step models for `P` and `Lambda`.
fn lyapunov_sweep(
    problem: &LQProblem,
    theta: &MatrixField,
    grid: &TimeGrid,
    cloud: &BrownianCloud,
    degree: usize,
) -> Result<(Vec<RegressionModel>, Vec<RegressionModel>, SweepDiag)> {
    backward_sweep(problem, grid, cloud, degree, |p, lam, k, w| {
        let th = theta.at(k, w);
        let snap = problem.snapshot(grid.time(k), w)?;
        Ok(lyapunov_driver(p, lam, &th, &snap))
    })
}

/// One backward regression sweep with a caller-supplied driver evaluated at
/// `(P_pred, Lambda_pred, k, w)`.
fn backward_sweep(
    problem: &LQProblem,
    grid: &TimeGrid,
    cloud: &BrownianCloud,
    degree: usize,
    driver: impl Fn(&DMatrix<f64>, &DMatrix<f64>, usize, f64) -> Result<DMatrix<f64>> + Sync,
) -> Result<(Vec<RegressionModel>, Vec<RegressionModel>, SweepDiag)> {
    require_solver_grid(grid)?;
    let paths = cloud.paths();
    check_path_budget(paths, degree)?;
    let steps = grid.steps();
    let dt = grid.dt();
    let factors: Vec<f64> = problem.basis.semigroup_factors(dt).iter().copied().collect();
    let probe_idx = cloud.probe_indices();

    // Terminal values, exact per sample.
    let mut vals: Vec<DMatrix<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| problem.terminal_g(cloud.w[i][steps]))
        .collect();

    let mut p_models: Vec<RegressionModel> = Vec::with_capacity(steps);
    let mut lambda_models: Vec<RegressionModel> = Vec::with_capacity(steps);
    let mut diag = SweepDiag {
        k_min_eig: f64::INFINITY,
        fallback_fits: 0,
        max_condition: 1.0,
    };

    for k in (0..steps).rev() {
        let t_k = grid.time(k);
        let wk: Vec<f64> = (0..paths).map(|i| cloud.w[i][k]).collect();

        // Conditional expectation of the next value.
        let e_model = RegressionModel::fit(&wk, &vals, degree, true)?;
        // Martingale integrand from the centered increment product.
        let lam_targets: Vec<DMatrix<f64>> = (0..paths)
            .into_par_iter()
            .map(|i| (&vals[i] - e_model.predict(wk[i])) * (cloud.incs[i][k] / dt))
            .collect();
        let lam_model = RegressionModel::fit(&wk, &lam_targets, degree, true)?;

        let stepped: Vec<Result<DMatrix<f64>>> = (0..paths)
            .into_par_iter()
            .map(|i| {
                let w = wk[i];
                let pred = e_model.predict(w);
                let lam = lam_model.predict(w);
                let drv = driver(&pred, &lam, k, w).map_err(|e| match e {
                    Error::SingularK(msg) => Error::SingularK(format!(
                        "{msg} (at t = {t_k:.6}, path {i})"
                    )),
                    other => other,
                })?;
                Ok(symmetrize(&conjugate_semigroup(&(pred + drv * dt), &factors)))
            })
            .collect();
        // Deterministic error selection: first failing path index wins.
        let mut new_vals = Vec::with_capacity(paths);
        for item in stepped {
            new_vals.push(item?);
        }
        vals = new_vals;

        let p_model = RegressionModel::fit(&wk, &vals, degree, true)?;

        for m in [&e_model, &lam_model, &p_model] {
            if m.fell_back {
                diag.fallback_fits += 1;
            }
            diag.max_condition = diag.max_condition.max(m.condition);
        }
        // K diagnostics on the probe paths.
        for &i in &probe_idx {
            let w = wk[i];
            let snap = problem.snapshot(t_k, w)?;
            let (k_mat, _) = compute_kl(&p_model.predict(w), &lam_model.predict(w), &snap);
            diag.k_min_eig = diag.k_min_eig.min(min_symmetric_eig(&k_mat));
        }

        p_models.push(p_model);
        lambda_models.push(lam_model);
    }
    p_models.reverse();
    lambda_models.reverse();
    Ok((p_models, lambda_models, diag))
}

/// Fits the pointwise gain `-K^{-1} L` from the current `(P, Lambda)`
/// models at every step.
fn fit_gain_field(
    problem: &LQProblem,
    grid: &TimeGrid,
    cloud: &BrownianCloud,
    p_models: &[RegressionModel],
    lambda_models: &[RegressionModel],
    theta_degree: usize,
) -> Result<(Vec<RegressionModel>, f64, usize, f64)> {
    let paths = cloud.paths();
    check_path_budget(paths, theta_degree)?;
    let mut models = Vec::with_capacity(grid.steps());
    let mut min_k_eig = f64::INFINITY;
    let mut fallbacks = 0usize;
    let mut max_condition = 1.0f64;
    let probe_idx = cloud.probe_indices();
    for k in 0..grid.steps() {
        let t_k = grid.time(k);
        let wk: Vec<f64> = (0..paths).map(|i| cloud.w[i][k]).collect();
        let targets: Vec<Result<DMatrix<f64>>> = (0..paths)
            .into_par_iter()
            .map(|i| {
                let w = wk[i];
                let snap = problem.snapshot(t_k, w)?;
                synthesize_feedback(
                    &p_models[k].predict(w),
                    &lambda_models[k].predict(w),
                    &snap,
                )
                .map_err(|e| match e {
                    Error::SingularK(msg) => {
                        Error::SingularK(format!("{msg} (at t = {t_k:.6}, path {i})"))
                    }
                    other => other,
                })
            })
            .collect();
        let mut gains = Vec::with_capacity(paths);
        for item in targets {
            gains.push(item?);
        }
        let model = RegressionModel::fit(&wk, &gains, theta_degree, false)?;
        if model.fell_back {
            fallbacks += 1;
        }
        max_condition = max_condition.max(model.condition);
        for &i in &probe_idx {
            let w = wk[i];
            let snap = problem.snapshot(t_k, w)?;
            let (k_mat, _) = compute_kl(
                &p_models[k].predict(w),
                &lambda_models[k].predict(w),
                &snap,
            );
            min_k_eig = min_k_eig.min(min_symmetric_eig(&k_mat));
        }
        models.push(model);
    }
    Ok((models, min_k_eig, fallbacks, max_condition))
}

/// Solves the linear Lyapunov backward equation under a frozen gain field
/// by regression Monte Carlo on a fresh Brownian cloud.
///
/// The returned solution stores the input gain as its feedback field, so it
/// can directly drive closed-loop simulations.
pub fn solve_lyapunov_bsde(
    problem: &LQProblem,
    theta: &MatrixField,
    grid: &TimeGrid,
    paths: usize,
    feature_degree: usize,
    seed: u64,
) -> Result<RiccatiSolution> {
    let cloud = brownian_cloud(grid, paths, seed)?;
    let (p_models, lambda_models, diag) =
        lyapunov_sweep(problem, theta, grid, &cloud, feature_degree)?;
    Ok(RiccatiSolution {
        grid: grid.clone(),
        representation: Representation::Regression,
        p: MatrixField::Reg(p_models),
        lambda: MatrixField::Reg(lambda_models),
        theta: theta.clone(),
        g: problem.g.clone(),
        horizon: problem.horizon,
        k_min_eig: diag.k_min_eig,
        iterations: Vec::new(),
        converged: true,
        fallback_fits: diag.fallback_fits,
        max_condition: diag.max_condition,
    })
}

/// Picard iteration for the coupled pair (backward equation, gain): starting
/// from the zero gain, alternately solves the linear Lyapunov equation under
/// the frozen gain and refits `Theta = -K^{-1} L`, reusing one Brownian
/// cloud so the iteration map is deterministic.
///
/// On problems with `B = D = 0` the first gain update is exactly zero and
/// the iteration stops after one pass. If `max_iters` passes do not meet the
/// tolerance the last iterate is returned with `converged = false`.
pub fn theta_fixed_point(
    problem: &LQProblem,
    grid: &TimeGrid,
    paths: usize,
    feature_degree: usize,
    seed: u64,
    options: &FixedPointOptions,
) -> Result<RiccatiSolution> {
    let cloud = brownian_cloud(grid, paths, seed)?;
    let theta_degree = options.theta_degree.unwrap_or(feature_degree + 6);
    let tol = options
        .tol
        .unwrap_or(if problem.is_deterministic() { 1e-6 } else { 1e-3 });
    if options.max_iters == 0 {
        return Err(Error::Contract("max_iters must be at least 1".into()));
    }

    let n = problem.basis.modes();
    let mut theta = MatrixField::Zero {
        rows: problem.control_dim,
        cols: n,
    };
    let mut iterations: Vec<IterationStat> = Vec::new();
    let mut converged = false;
    let mut k_min_eig = f64::INFINITY;
    let mut fallback_fits = 0usize;
    let mut max_condition = 1.0f64;
    let mut fields: Option<(Vec<RegressionModel>, Vec<RegressionModel>)> = None;

    for iteration in 1..=options.max_iters {
        let (p_models, lambda_models, diag) =
            lyapunov_sweep(problem, &theta, grid, &cloud, feature_degree)?;
        let (gain_models, min_k, gain_fallbacks, gain_cond) = fit_gain_field(
            problem,
            grid,
            &cloud,
            &p_models,
            &lambda_models,
            theta_degree,
        )?;
        k_min_eig = k_min_eig.min(diag.k_min_eig.min(min_k));
        fallback_fits += diag.fallback_fits + gain_fallbacks;
        max_condition = max_condition.max(diag.max_condition.max(gain_cond));

        let new_theta = MatrixField::Reg(gain_models);
        let delta = (0..grid.steps())
            .map(|k| new_theta.rms_delta_at(&theta, k, &cloud.probes_at(k)))
            .fold(0.0, f64::max);
        iterations.push(IterationStat {
            iteration,
            delta,
            min_k_eig: min_k,
        });
        theta = new_theta;
        fields = Some((p_models, lambda_models));
        if delta < tol {
            converged = true;
            break;
        }
    }

    let (p_models, lambda_models) = fields.expect("at least one iteration ran");
    Ok(RiccatiSolution {
        grid: grid.clone(),
        representation: Representation::Regression,
        p: MatrixField::Reg(p_models),
        lambda: MatrixField::Reg(lambda_models),
        theta,
        g: problem.g.clone(),
        horizon: problem.horizon,
        k_min_eig,
        iterations,
        converged,
        fallback_fits,
        max_condition,
    })
}

/// Single backward regression sweep with the full nonlinear Riccati driver
/// evaluated at the running conditional-expectation estimates, followed by
/// one gain synthesis pass.
pub fn solve_riccati_bsde_direct(
    problem: &LQProblem,
    grid: &TimeGrid,
    paths: usize,
    feature_degree: usize,
    seed: u64,
) -> Result<RiccatiSolution> {
    let cloud = brownian_cloud(grid, paths, seed)?;
    let (p_models, lambda_models, diag) =
        backward_sweep(problem, grid, &cloud, feature_degree, |p, lam, k, w| {
            let snap = problem.snapshot(grid.time(k), w)?;
            bsre_driver(p, lam, &snap)
        })?;
    let (gain_models, min_k, gain_fallbacks, gain_cond) = fit_gain_field(
        problem,
        grid,
        &cloud,
        &p_models,
        &lambda_models,
        feature_degree + 6,
    )?;
    Ok(RiccatiSolution {
        grid: grid.clone(),
        representation: Representation::Regression,
        p: MatrixField::Reg(p_models),
        lambda: MatrixField::Reg(lambda_models),
        theta: MatrixField::Reg(gain_models),
        g: problem.g.clone(),
        horizon: problem.horizon,
        k_min_eig: diag.k_min_eig.min(min_k),
        iterations: Vec::new(),
        converged: true,
        fallback_fits: diag.fallback_fits + gain_fallbacks,
        max_condition: diag.max_condition.max(gain_cond),
    })
}
