//! Forward simulation of the truncated stochastic evolution equation and
//! quadratic cost evaluation.
//!
//! One exponential-Euler step reads
//!
//! ```text
//! x_{k+1} = e^{A dt} [ x_k + (A1 x_k + B u_k + f_k) dt
//!                          + (C x_k + D u_k + h_k) dW_k ],
//! ```
//!
//! where `f`/`h` are optional drift/diffusion forcings. The semigroup factor
//! is applied exactly per step, so the scheme respects the contraction of
//! the analytic semigroup even for stiff modes. Costs use left-endpoint
//! quadrature in time.
//!
//! Each Monte Carlo path owns a counter-based RNG stream derived from
//! `(seed, path index)`, so results are bitwise reproducible at any worker
//! count and paths can be simulated in parallel.

use crate::error::{Error, Result};
use crate::problem::{CoefficientSnapshot, LQProblem};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Uniform time grid on `[t0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if !(horizon > t0) {
            return Err(Error::Config(format!(
                "empty time interval [{t0}, {horizon}]"
            )));
        }
        Ok(Self {
            t0,
            horizon,
            steps,
            dt: (horizon - t0) / steps as f64,
        })
    }

    /// Grid covering the problem's full horizon with its configured step
    /// count.
    pub fn for_problem(problem: &LQProblem) -> Self {
        Self::new(0.0, problem.horizon, problem.time_steps)
            .expect("problem invariants guarantee a valid grid")
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `k`-th grid time, `k` in `0..=steps`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    /// Index of a grid time, within floating-point slack.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let raw = (t - self.t0) / self.dt;
        let k = raw.round();
        if (raw - k).abs() > 1e-9 * (1.0 + raw.abs()) || k < 0.0 || k > self.steps as f64 {
            return Err(Error::Contract(format!("time {t} is not on the grid")));
        }
        Ok(k as usize)
    }

    /// Sub-grid from grid time `t` to the horizon (same step size).
    pub fn suffix_from(&self, t: f64) -> Result<Self> {
        let k = self.index_of(t)?;
        if k == self.steps {
            return Err(Error::Contract(
                "cannot start a simulation at the horizon".into(),
            ));
        }
        Ok(Self {
            t0: self.time(k),
            horizon: self.horizon,
            steps: self.steps - k,
            dt: self.dt,
        })
    }
}

/// State-feedback policy `u = Theta(t, W(t)) x`, evaluated stepwise.
pub trait FeedbackPolicy: Sync {
    /// Gain matrix at `(t, w)`, shape `control_dim x modes`.
    fn gain(&self, t: f64, w: f64) -> nalgebra::DMatrix<f64>;

    /// Control at grid step `k`; the default applies the gain to the state.
    fn control(&self, _k: usize, t: f64, w: f64, x: &DVector<f64>) -> DVector<f64> {
        self.gain(t, w) * x
    }
}

/// Constant-gain feedback (mostly for tests and perturbation studies).
pub struct ConstGain(pub nalgebra::DMatrix<f64>);

impl FeedbackPolicy for ConstGain {
    fn gain(&self, _t: f64, _w: f64) -> nalgebra::DMatrix<f64> {
        self.0.clone()
    }
}

/// Feedback plus a per-step open-loop offset: `u_k = base(x_k) + scale *
/// offsets[k]`. Offsets are indexed by the simulation's local step number.
pub struct PerturbedFeedback<'a> {
    pub base: &'a dyn FeedbackPolicy,
    pub offsets: &'a [DVector<f64>],
    pub scale: f64,
}

impl FeedbackPolicy for PerturbedFeedback<'_> {
    fn gain(&self, t: f64, w: f64) -> nalgebra::DMatrix<f64> {
        self.base.gain(t, w)
    }

    fn control(&self, k: usize, t: f64, w: f64, x: &DVector<f64>) -> DVector<f64> {
        self.base.control(k, t, w, x) + &self.offsets[k] * self.scale
    }
}

/// Control policy for a simulation run.
pub enum Control<'a> {
    /// `u = 0`.
    Zero,
    /// One control sequence shared by every path; length = steps.
    OpenLoop(&'a [DVector<f64>]),
    /// Per-path control sequences; outer length = paths.
    OpenLoopPerPath(&'a [Vec<DVector<f64>>]),
    /// Closed loop `u_k = policy(k, t_k, W_k, x_k)`.
    Feedback(&'a dyn FeedbackPolicy),
}

/// Additive forcing sequence (drift or diffusion channel).
pub enum Forcing<'a> {
    /// One sequence shared by every path; length = steps.
    Shared(&'a [DVector<f64>]),
    /// Per-path sequences; outer length = paths.
    PerPath(&'a [Vec<DVector<f64>>]),
}

impl Forcing<'_> {
    fn at(&self, path: usize, step: usize) -> &DVector<f64> {
        match self {
            Forcing::Shared(seq) => &seq[step],
            Forcing::PerPath(seqs) => &seqs[path][step],
        }
    }

    fn validate(&self, paths: usize, steps: usize, dim: usize, name: &str) -> Result<()> {
        let check_seq = |seq: &[DVector<f64>]| -> Result<()> {
            if seq.len() != steps {
                return Err(Error::Contract(format!(
                    "{name} forcing has {} entries, expected {steps}",
                    seq.len()
                )));
            }
            if seq.iter().any(|v| v.len() != dim) {
                return Err(Error::Contract(format!(
                    "{name} forcing entries must have length {dim}"
                )));
            }
            Ok(())
        };
        match self {
            Forcing::Shared(seq) => check_seq(seq),
            Forcing::PerPath(seqs) => {
                if seqs.len() != paths {
                    return Err(Error::Contract(format!(
                        "{name} forcing covers {} paths, expected {paths}",
                        seqs.len()
                    )));
                }
                seqs.iter().try_for_each(|s| check_seq(s))
            }
        }
    }
}

/// Simulated paths of the forward equation, with the driving noise and the
/// realized controls.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub grid: TimeGrid,
    /// `states[i][k]` is path `i` at grid time `k`, `k` in `0..=steps`.
    pub states: Vec<Vec<DVector<f64>>>,
    /// Brownian increments per path and step.
    pub increments: Vec<Vec<f64>>,
    /// Brownian values `W(t_k)` per path, `k` in `0..=steps`.
    pub w: Vec<Vec<f64>>,
    /// Realized controls per path (absent for zero control).
    pub controls: Option<Vec<Vec<DVector<f64>>>>,
    pub seed: u64,
}

impl TrajectoryBundle {
    /// Empirical `(mean, variance)` of all Brownian increments, for the
    /// sanity bound `mean -> 0`, `variance -> dt`.
    pub fn increment_moments(&self) -> (f64, f64) {
        let mut n = 0usize;
        let mut mean = 0.0;
        for path in &self.increments {
            for &dw in path {
                n += 1;
                mean += dw;
            }
        }
        let n_f = n as f64;
        mean /= n_f;
        if n < 2 {
            return (mean, 0.0);
        }
        let mut var = 0.0;
        for path in &self.increments {
            for &dw in path {
                var += (dw - mean) * (dw - mean);
            }
        }
        (mean, var / (n_f - 1.0))
    }
}

/// One exponential-Euler step: `e^{A dt} (x + drift dt + diffusion dW)`,
/// with `semi` holding the per-mode factors `e^{mu_j dt}`.
pub fn exp_euler_step(
    semi: &DVector<f64>,
    x: &DVector<f64>,
    drift: &DVector<f64>,
    diffusion: &DVector<f64>,
    dt: f64,
    dw: f64,
) -> DVector<f64> {
    let mut y = x + drift * dt + diffusion * dw;
    y.component_mul_assign(semi);
    y
}

/// Runs `f` once per path with that path's dedicated RNG, in parallel.
/// Stream `i + 1` of the seeded generator drives path `i` (stream 0 is
/// reserved for non-path draws), so output does not depend on the worker
/// count.
pub fn map_paths<R: Send>(
    paths: usize,
    seed: u64,
    f: impl Fn(usize, &mut ChaCha8Rng) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            f(i, &mut rng)
        })
        .collect()
}

/// Per-step coefficient lookup: precomputed snapshots for deterministic
/// problems, live evaluation at `(t_k, W_k)` otherwise.
pub(crate) enum CoeffSource {
    Cached(Vec<CoefficientSnapshot>),
    Live,
}

impl CoeffSource {
    pub(crate) fn prepare(problem: &LQProblem, grid: &TimeGrid) -> Result<Self> {
        if problem.is_deterministic() {
            let snaps = (0..grid.steps())
                .map(|k| problem.snapshot(grid.time(k), 0.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(CoeffSource::Cached(snaps))
        } else {
            Ok(CoeffSource::Live)
        }
    }

    pub(crate) fn at<'a>(
        &'a self,
        problem: &LQProblem,
        grid: &TimeGrid,
        k: usize,
        w: f64,
        scratch: &'a mut Option<CoefficientSnapshot>,
    ) -> Result<&'a CoefficientSnapshot> {
        match self {
            CoeffSource::Cached(snaps) => Ok(&snaps[k]),
            CoeffSource::Live => {
                *scratch = Some(problem.snapshot(grid.time(k), w)?);
                Ok(scratch.as_ref().expect("just stored"))
            }
        }
    }
}

/// Draws the Brownian start value and increments for one path. `W(t0)` is
/// `sqrt(t0) z` (the marginal of a Brownian motion started at time zero),
/// drawn before the increments.
pub(crate) fn draw_brownian(
    grid: &TimeGrid,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<f64>) {
    let w0 = if grid.t0() > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        grid.t0().sqrt() * z
    } else {
        0.0
    };
    let sqrt_dt = grid.dt().sqrt();
    let incs = (0..grid.steps())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sqrt_dt * z
        })
        .collect();
    (w0, incs)
}

/// Simulates the controlled forward equation.
///
/// The control is one of: zero, a shared or per-path open-loop sequence, or
/// a feedback policy evaluated at `(t_k, W_k, x_k)`. Optional forcings add
/// to the drift (`forcing_u`) and diffusion (`forcing_v`) channels, which is
/// the generic form required by the transposition identities.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    problem: &LQProblem,
    grid: &TimeGrid,
    init: &DVector<f64>,
    control: &Control,
    forcing_u: Option<&Forcing>,
    forcing_v: Option<&Forcing>,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let n = problem.basis.modes();
    if init.len() != n {
        return Err(Error::Contract(format!(
            "initial state has length {}, expected {n}",
            init.len()
        )));
    }
    if paths == 0 {
        return Err(Error::Contract("at least one path required".into()));
    }
    if grid.t0() < -1e-12 || grid.horizon() > problem.horizon * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::Contract(format!(
            "grid [{}, {}] exceeds the problem horizon {}",
            grid.t0(),
            grid.horizon(),
            problem.horizon
        )));
    }
    let steps = grid.steps();
    match control {
        Control::OpenLoop(seq) => {
            if seq.len() != steps || seq.iter().any(|u| u.len() != problem.control_dim) {
                return Err(Error::Contract(
                    "open-loop control must supply one control of the right length per step"
                        .into(),
                ));
            }
        }
        Control::OpenLoopPerPath(seqs) => {
            if seqs.len() != paths
                || seqs
                    .iter()
                    .any(|s| s.len() != steps || s.iter().any(|u| u.len() != problem.control_dim))
            {
                return Err(Error::Contract(
                    "per-path open-loop control must cover every path and step".into(),
                ));
            }
        }
        _ => {}
    }
    if let Some(f) = forcing_u {
        f.validate(paths, steps, n, "drift")?;
    }
    if let Some(f) = forcing_v {
        f.validate(paths, steps, n, "diffusion")?;
    }

    let semi = problem.basis.semigroup_factors(grid.dt());
    let coeffs = CoeffSource::prepare(problem, grid)?;
    let record_controls = !matches!(control, Control::Zero);

    struct PathOut {
        states: Vec<DVector<f64>>,
        incs: Vec<f64>,
        w: Vec<f64>,
        controls: Option<Vec<DVector<f64>>>,
    }

    let outs = map_paths(paths, seed, |i, rng| {
        let (w0, incs) = draw_brownian(grid, rng);
        let mut states = Vec::with_capacity(steps + 1);
        let mut wvals = Vec::with_capacity(steps + 1);
        let mut recorded = record_controls.then(|| Vec::with_capacity(steps));
        states.push(init.clone());
        wvals.push(w0);
        let mut x = init.clone();
        let mut w = w0;
        for k in 0..steps {
            let mut scratch = None;
            let snap = coeffs.at(problem, grid, k, w, &mut scratch)?;
            let t = grid.time(k);
            let u = match control {
                Control::Zero => None,
                Control::OpenLoop(seq) => Some(seq[k].clone()),
                Control::OpenLoopPerPath(seqs) => Some(seqs[i][k].clone()),
                Control::Feedback(policy) => Some(policy.control(k, t, w, &x)),
            };
            let mut drift = &snap.a1 * &x;
            let mut diffusion = &snap.c * &x;
            if let Some(u) = &u {
                drift += &snap.b * u;
                diffusion += &snap.d * u;
            }
            if let Some(f) = forcing_u {
                drift += f.at(i, k);
            }
            if let Some(f) = forcing_v {
                diffusion += f.at(i, k);
            }
            let dw = incs[k];
            x = exp_euler_step(&semi, &x, &drift, &diffusion, grid.dt(), dw);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation(format!(
                    "state became non-finite on path {i} at step {}",
                    k + 1
                )));
            }
            w += dw;
            states.push(x.clone());
            wvals.push(w);
            if let Some(rec) = recorded.as_mut() {
                rec.push(u.unwrap_or_else(|| DVector::zeros(problem.control_dim)));
            }
        }
        Ok(PathOut {
            states,
            incs,
            w: wvals,
            controls: recorded,
        })
    })?;

    let mut states = Vec::with_capacity(paths);
    let mut increments = Vec::with_capacity(paths);
    let mut w = Vec::with_capacity(paths);
    let mut controls = record_controls.then(|| Vec::with_capacity(paths));
    for out in outs {
        states.push(out.states);
        increments.push(out.incs);
        w.push(out.w);
        if let (Some(all), Some(one)) = (controls.as_mut(), out.controls) {
            all.push(one);
        }
    }
    Ok(TrajectoryBundle {
        grid: grid.clone(),
        states,
        increments,
        w,
        controls,
        seed,
    })
}

/// Simulates the closed-loop flow from grid time `t`: the homogeneous
/// equation under the feedback `theta` with zero forcings, started at
/// `init`. Linearity in `init` holds path by path under a common seed.
pub fn flow_map(
    problem: &LQProblem,
    theta: &dyn FeedbackPolicy,
    grid: &TimeGrid,
    t: f64,
    init: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let sub = grid.suffix_from(t)?;
    simulate(
        problem,
        &sub,
        init,
        &Control::Feedback(theta),
        None,
        None,
        paths,
        seed,
    )
}

/// Monte Carlo cost summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CostReport {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    /// Per-path costs, retained unless dropped for memory.
    pub per_path: Option<Vec<f64>>,
}

/// Evaluates the quadratic cost on simulated paths by left-endpoint
/// quadrature:
///
/// ```text
/// J_i = 1/2 [ sum_k (<Q x_k, x_k> + <R u_k, u_k>) dt + <G x_T, x_T> ].
/// ```
///
/// Controls come from `controls` if given, else from the bundle's recorded
/// ones, else they are zero.
pub fn evaluate_cost(
    problem: &LQProblem,
    bundle: &TrajectoryBundle,
    controls: Option<&[Vec<DVector<f64>>]>,
    keep_per_path: bool,
) -> Result<CostReport> {
    let paths = bundle.states.len();
    let steps = bundle.grid.steps();
    let dt = bundle.grid.dt();
    let controls = controls.or(bundle.controls.as_deref());
    if let Some(ctrls) = controls {
        if ctrls.len() != paths || ctrls.iter().any(|c| c.len() != steps) {
            return Err(Error::Contract(
                "control sequences must align with the bundle's paths and steps".into(),
            ));
        }
    }
    let coeffs = CoeffSource::prepare(problem, &bundle.grid)?;
    let per_path: Vec<f64> = bundle
        .states
        .par_iter()
        .enumerate()
        .map(|(i, xs)| {
            let mut acc = 0.0;
            for k in 0..steps {
                let mut scratch = None;
                let snap = coeffs.at(problem, &bundle.grid, k, bundle.w[i][k], &mut scratch)?;
                let x = &xs[k];
                acc += (&snap.q * x).dot(x) * dt;
                if let Some(ctrls) = controls {
                    let u = &ctrls[i][k];
                    acc += (&snap.r * u).dot(u) * dt;
                }
            }
            let xt = &xs[steps];
            let g = problem.terminal_g(bundle.w[i][steps]);
            acc += (&g * xt).dot(xt);
            Ok(0.5 * acc)
        })
        .collect::<Result<_>>()?;
    let mean = per_path.iter().sum::<f64>() / paths as f64;
    let std_error = if paths > 1 {
        let var = per_path.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
            / (paths as f64 - 1.0);
        (var / paths as f64).sqrt()
    } else {
        0.0
    };
    Ok(CostReport {
        mean,
        std_error,
        paths,
        per_path: keep_per_path.then_some(per_path),
    })
}
