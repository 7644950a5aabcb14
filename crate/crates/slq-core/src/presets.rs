//! Named problem presets and tiny parametric spatial-coefficient forms.
//!
//! Presets cover the benchmark family used across the test suite and the
//! CLI: a scalar closed-form Riccati benchmark, the one-dimensional
//! controlled heat equation (deterministic and random-coefficient
//! variants), a scalar Wonham-type problem with control-dependent noise,
//! a pure conditional-expectation problem whose Riccati driver vanishes,
//! and the null problem.

use crate::error::{Error, Result};
use crate::problem::{from_parabolic_spec, CoefficientProcess, LQProblem};
use crate::spectral::SpectralBasis;
use nalgebra::DMatrix;
use std::sync::Arc;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar benchmark with closed-form solution: single flat mode, drift and
/// noise off, `B = R = G = 1`, `Q = 0`. The backward solution is
/// `P(t) = 1 / (1 + (T - t))`, so `P(0) = 0.5` at `T = 1`.
pub fn scalar_benchmark(horizon: f64, steps: usize) -> LQProblem {
    let basis = SpectralBasis::flat(1);
    LQProblem::new(
        basis,
        horizon,
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::constant(scalar(1.0)),
        1,
        steps,
    )
    .expect("scalar benchmark data is well-formed")
}

/// Controlled heat equation on (0,1) with constant unit weights:
/// `a1 = a2 = b2 = 0`, `b1 = q = r = g = 1`.
pub fn heat_1d_deterministic(modes: usize, horizon: f64, steps: usize) -> Result<LQProblem> {
    let basis = SpectralBasis::dirichlet(1, modes)?;
    from_parabolic_spec(
        &|_| 0.0,
        &|_| 0.0,
        &|_| 1.0,
        &|_| 0.0,
        &|_| 1.0,
        &|_| 1.0,
        &|_| 1.0,
        &basis,
        horizon,
        steps,
    )
}

/// Random-coefficient heat equation: the deterministic instance with
/// bounded Brownian-functional perturbations of the drift and diffusion
/// operators and a random terminal weight,
/// `A1(t,w) = 0.3 sin(w) I`, `C(t,w) = 0.2 cos(w) I`,
/// `G(w) = (1 + 0.25 tanh(w)) I`.
pub fn heat_1d_random(modes: usize, horizon: f64, steps: usize) -> Result<LQProblem> {
    let det = heat_1d_deterministic(modes, horizon, steps)?;
    let n = modes;
    LQProblem::new(
        det.basis.clone(),
        horizon,
        CoefficientProcess::brownian(move |_t, w| DMatrix::identity(n, n) * (0.3 * w.sin()))
            .with_smoothness("bounded-trig"),
        det.b.clone(),
        CoefficientProcess::brownian(move |_t, w| DMatrix::identity(n, n) * (0.2 * w.cos()))
            .with_smoothness("bounded-trig"),
        CoefficientProcess::zero(n, n),
        det.q.clone(),
        det.r.clone(),
        CoefficientProcess::brownian(move |_t, w| {
            DMatrix::identity(n, n) * (1.0 + 0.25 * w.tanh())
        })
        .with_smoothness("bounded-tanh"),
        n,
        steps,
    )
}

/// Scalar Wonham-type problem with control-dependent noise: flat single
/// mode, `D = 1`, `C = 0`, `B = Q = R = 1`, so `K = R + P` and the optimal
/// feedback is `Theta = -P / (R + P)`. With `random_terminal` the terminal
/// weight becomes `G(w) = 1 + 0.5 tanh(w)`, otherwise `G = 1`.
pub fn wonham(random_terminal: bool, horizon: f64, steps: usize) -> LQProblem {
    let g = if random_terminal {
        CoefficientProcess::brownian(|_t, w| scalar(1.0 + 0.5 * w.tanh()))
            .with_smoothness("bounded-tanh")
    } else {
        CoefficientProcess::constant(scalar(1.0))
    };
    LQProblem::new(
        SpectralBasis::flat(1),
        horizon,
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::constant(scalar(1.0)),
        g,
        1,
        steps,
    )
    .expect("wonham benchmark data is well-formed")
}

/// Pure conditional-expectation problem: every dynamic coefficient and the
/// running state weight vanish while `R = 1`, so the Riccati driver is zero
/// and the backward solution is exactly `P(t) = E[G(W_T) | W_t]` with
/// `G(w) = clip(w^2, 0, 4)`.
pub fn conditional_expectation(horizon: f64, steps: usize) -> LQProblem {
    LQProblem::new(
        SpectralBasis::flat(1),
        horizon,
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::zero(1, 1),
        CoefficientProcess::constant(scalar(1.0)),
        CoefficientProcess::brownian(|_t, w| scalar((w * w).clamp(0.0, 4.0)))
            .with_smoothness("bounded-clipped-square"),
        1,
        steps,
    )
    .expect("conditional-expectation data is well-formed")
}

/// Null problem: `Q = G = 0` and `B = D = C = A1 = 0` with `R = I` (kept
/// strictly positive so the gain stays well-defined). The backward solution
/// is `P = 0`, `Lambda = 0`, and every identity holds with both sides zero.
pub fn null_problem(modes: usize, horizon: f64, steps: usize) -> LQProblem {
    let n = modes.max(1);
    LQProblem::new(
        SpectralBasis::flat(n),
        horizon,
        CoefficientProcess::zero(n, n),
        CoefficientProcess::zero(n, n),
        CoefficientProcess::zero(n, n),
        CoefficientProcess::zero(n, n),
        CoefficientProcess::zero(n, n),
        CoefficientProcess::constant(DMatrix::identity(n, n)),
        CoefficientProcess::zero(n, n),
        n,
        steps,
    )
    .expect("null problem data is well-formed")
}

/// Names accepted by [`build`].
pub const PRESET_NAMES: [&str; 7] = [
    "scalar-benchmark",
    "heat-1d-deterministic",
    "heat-1d-random",
    "wonham-deterministic",
    "wonham-random",
    "conditional-expectation",
    "null",
];

/// Builds a preset by name. Scalar presets use a single flat mode and
/// ignore `modes`.
pub fn build(name: &str, modes: usize, horizon: f64, steps: usize) -> Result<LQProblem> {
    match name {
        "scalar-benchmark" => Ok(scalar_benchmark(horizon, steps)),
        "heat-1d-deterministic" => heat_1d_deterministic(modes, horizon, steps),
        "heat-1d-random" => heat_1d_random(modes, horizon, steps),
        "wonham-deterministic" => Ok(wonham(false, horizon, steps)),
        "wonham-random" => Ok(wonham(true, horizon, steps)),
        "conditional-expectation" => Ok(conditional_expectation(horizon, steps)),
        "null" => Ok(null_problem(modes, horizon, steps)),
        other => Err(Error::Config(format!(
            "unknown preset '{other}'; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Parses a parametric spatial coefficient expression.
///
/// Accepted forms (x is the spatial variable in (0,1)):
/// - a bare number, e.g. `"1.5"` or `"constant:1.5"` — the constant;
/// - `"affine:a,b"` — `a + b x`;
/// - `"sin:a,k"` — `a sin(k pi x)`;
/// - `"cos:a,k"` — `a cos(k pi x)`.
pub fn parse_spatial(expr: &str) -> Result<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
    let expr = expr.trim();
    if let Ok(c) = expr.parse::<f64>() {
        return Ok(Arc::new(move |_| c));
    }
    let (form, args) = expr
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("unparseable coefficient expression '{expr}'")))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{s}' in expression '{expr}'")))
        })
        .collect::<Result<_>>()?;
    let need = |k: usize| -> Result<()> {
        if nums.len() == k {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "expression '{expr}' needs {k} parameters, got {}",
                nums.len()
            )))
        }
    };
    match form {
        "constant" => {
            need(1)?;
            let c = nums[0];
            Ok(Arc::new(move |_| c))
        }
        "affine" => {
            need(2)?;
            let (a, b) = (nums[0], nums[1]);
            Ok(Arc::new(move |x: &[f64]| a + b * x[0]))
        }
        "sin" => {
            need(2)?;
            let (a, k) = (nums[0], nums[1]);
            Ok(Arc::new(move |x: &[f64]| {
                a * (k * std::f64::consts::PI * x[0]).sin()
            }))
        }
        "cos" => {
            need(2)?;
            let (a, k) = (nums[0], nums[1]);
            Ok(Arc::new(move |x: &[f64]| {
                a * (k * std::f64::consts::PI * x[0]).cos()
            }))
        }
        other => Err(Error::Config(format!(
            "unknown coefficient form '{other}' in '{expr}'"
        ))),
    }
}
