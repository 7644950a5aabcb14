//! LQ problem data: coefficient processes, cost weights, and numeric
//! surrogates for the standing assumptions.
//!
//! The controlled state equation and cost on the truncated basis are
//!
//! ```text
//! dx = [(A + A1(t,W)) x + B(t,W) u] dt + [C(t,W) x + D(t,W) u] dW,
//! J(u) = 1/2 E [ int (<Q x, x> + <R u, u>) dt + <G x(T), x(T)> ],
//! ```
//!
//! with every coefficient either deterministic in time or a functional of
//! `(t, W(t))`. Sign conditions required of the data: `Q >= 0`, `R > 0`,
//! `G >= 0` at every evaluation point.

use crate::error::{Error, Result};
use crate::spectral::{multiplication_matrix, SpectralBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// Whether a coefficient depends on the driving Brownian value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    Deterministic,
    BrownianFunctional,
}

/// A matrix-valued coefficient evaluated at `(t, W(t))`.
///
/// Evaluation must be pure: identical arguments yield identical matrices, so
/// coefficients can be evaluated concurrently across Monte Carlo paths.
#[derive(Clone)]
pub struct CoefficientProcess {
    kind: CoefficientKind,
    smoothness: String,
    eval: Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>,
}

impl std::fmt::Debug for CoefficientProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientProcess")
            .field("kind", &self.kind)
            .field("smoothness", &self.smoothness)
            .finish_non_exhaustive()
    }
}

impl CoefficientProcess {
    /// Constant matrix coefficient.
    pub fn constant(matrix: DMatrix<f64>) -> Self {
        Self {
            kind: CoefficientKind::Deterministic,
            smoothness: "constant".into(),
            eval: Arc::new(move |_, _| matrix.clone()),
        }
    }

    /// Zero coefficient of the given shape.
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    /// Deterministic time-varying coefficient; the Brownian argument is
    /// ignored.
    pub fn time_varying(f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            kind: CoefficientKind::Deterministic,
            smoothness: "time-varying".into(),
            eval: Arc::new(move |t, _| f(t)),
        }
    }

    /// Random coefficient given as a functional of `(t, W(t))`.
    pub fn brownian(f: impl Fn(f64, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            kind: CoefficientKind::BrownianFunctional,
            smoothness: "brownian-functional".into(),
            eval: Arc::new(f),
        }
    }

    pub fn with_smoothness(mut self, tag: &str) -> Self {
        self.smoothness = tag.to_string();
        self
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn smoothness(&self) -> &str {
        &self.smoothness
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind == CoefficientKind::Deterministic
    }

    /// Evaluates the coefficient at `(t, w)`.
    pub fn eval(&self, t: f64, w: f64) -> DMatrix<f64> {
        (self.eval)(t, w)
    }
}

/// All coefficient matrices materialized at one `(t, w)` point. The cost
/// weights `q`, `r` and the terminal weight `g` are symmetrized on build.
#[derive(Debug, Clone)]
pub struct CoefficientSnapshot {
    pub a1: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Complete LQ problem data on a truncated basis.
#[derive(Debug, Clone)]
pub struct LQProblem {
    pub basis: SpectralBasis,
    pub horizon: f64,
    pub a1: CoefficientProcess,
    pub b: CoefficientProcess,
    pub c: CoefficientProcess,
    pub d: CoefficientProcess,
    pub q: CoefficientProcess,
    pub r: CoefficientProcess,
    pub g: CoefficientProcess,
    pub control_dim: usize,
    pub time_steps: usize,
}

impl LQProblem {
    /// Validates shapes by evaluating every coefficient at `(0, 0)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: SpectralBasis,
        horizon: f64,
        a1: CoefficientProcess,
        b: CoefficientProcess,
        c: CoefficientProcess,
        d: CoefficientProcess,
        q: CoefficientProcess,
        r: CoefficientProcess,
        g: CoefficientProcess,
        control_dim: usize,
        time_steps: usize,
    ) -> Result<Self> {
        if horizon <= 0.0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if time_steps == 0 {
            return Err(Error::Config("time step count must be at least 1".into()));
        }
        let n = basis.modes();
        let checks: [(&str, &CoefficientProcess, usize, usize); 7] = [
            ("A1", &a1, n, n),
            ("B", &b, n, control_dim),
            ("C", &c, n, n),
            ("D", &d, n, control_dim),
            ("Q", &q, n, n),
            ("R", &r, control_dim, control_dim),
            ("G", &g, n, n),
        ];
        for (name, coeff, rows, cols) in checks {
            let m = coeff.eval(0.0, 0.0);
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::Config(format!(
                    "coefficient {name} has shape {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self {
            basis,
            horizon,
            a1,
            b,
            c,
            d,
            q,
            r,
            g,
            control_dim,
            time_steps,
        })
    }

    /// True when every coefficient ignores the Brownian argument; such
    /// problems are solved by the deterministic Riccati ODE.
    pub fn is_deterministic(&self) -> bool {
        [
            &self.a1, &self.b, &self.c, &self.d, &self.q, &self.r, &self.g,
        ]
        .iter()
        .all(|c| c.is_deterministic())
    }

    /// Materializes all coefficients at `(t, w)`. The terminal weight is
    /// evaluated at the same Brownian value (it only carries meaning at the
    /// horizon).
    pub fn snapshot(&self, t: f64, w: f64) -> Result<CoefficientSnapshot> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Contract(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(CoefficientSnapshot {
            a1: self.a1.eval(t, w),
            b: self.b.eval(t, w),
            c: self.c.eval(t, w),
            d: self.d.eval(t, w),
            q: symmetrize(&self.q.eval(t, w)),
            r: symmetrize(&self.r.eval(t, w)),
            g: symmetrize(&self.g.eval(t, w)),
        })
    }

    /// Terminal weight `G` evaluated at the Brownian value `w`, symmetrized.
    pub fn terminal_g(&self, w: f64) -> DMatrix<f64> {
        symmetrize(&self.g.eval(self.horizon, w))
    }
}

/// Materializes all coefficients of `problem` at `(t, w)`.
pub fn evaluate_coefficients(problem: &LQProblem, t: f64, w: f64) -> Result<CoefficientSnapshot> {
    problem.snapshot(t, w)
}

/// Strict positivity floor required of `R`.
pub const R_MIN: f64 = 1e-6;

/// Builds the parabolic instance: state equation
/// `dy - Laplace(y) dt = (a1 y + b1 u) dt + (a2 y + b2 u) dW` with running
/// weights `q, r` and terminal weight `g`, all multiplication operators by
/// the given spatial functions.
#[allow(clippy::too_many_arguments)]
pub fn from_parabolic_spec(
    a1: &dyn Fn(&[f64]) -> f64,
    a2: &dyn Fn(&[f64]) -> f64,
    b1: &dyn Fn(&[f64]) -> f64,
    b2: &dyn Fn(&[f64]) -> f64,
    q: &dyn Fn(&[f64]) -> f64,
    r: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(&[f64]) -> f64,
    basis: &SpectralBasis,
    horizon: f64,
    steps: usize,
) -> Result<LQProblem> {
    let n = basis.modes();
    let quad = 4 * n;
    // Pointwise sign checks on a dense grid before projecting.
    let probes = 8 * n + 1;
    for i in 0..=probes {
        let x = i as f64 / probes as f64;
        let points: Vec<Vec<f64>> = match basis.spatial_dim() {
            1 => vec![vec![x]],
            _ => (0..=probes)
                .map(|j| vec![x, j as f64 / probes as f64])
                .collect(),
        };
        for p in &points {
            if r(p) < R_MIN {
                return Err(Error::Assumption(format!(
                    "control weight r must satisfy r >= {R_MIN} everywhere; r({p:?}) = {}",
                    r(p)
                )));
            }
            if q(p) < 0.0 {
                return Err(Error::Assumption(format!(
                    "state weight q must be nonnegative; q({p:?}) = {}",
                    q(p)
                )));
            }
            if g(p) < 0.0 {
                return Err(Error::Assumption(format!(
                    "terminal weight g must be nonnegative; g({p:?}) = {}",
                    g(p)
                )));
            }
        }
    }
    let assemble = |f: &dyn Fn(&[f64]) -> f64, name: &str| -> Result<CoefficientProcess> {
        let m = multiplication_matrix(f, basis, quad, name)?;
        Ok(CoefficientProcess::constant(m.entries).with_smoothness("multiplication"))
    };
    LQProblem::new(
        basis.clone(),
        horizon,
        assemble(a1, "a1")?,
        assemble(b1, "b1")?,
        assemble(a2, "a2")?,
        assemble(b2, "b2")?,
        assemble(q, "q")?,
        assemble(r, "r")?,
        assemble(g, "g")?,
        n,
        steps,
    )
}

/// One verified assumption with its measured witness.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionItem {
    pub name: String,
    pub passed: bool,
    /// Failed mandatory assumptions block downstream solvers.
    pub mandatory: bool,
    pub witness: String,
}

/// Sampled verification of the standing assumptions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionReport {
    pub items: Vec<AssumptionItem>,
    /// Largest |w| drawn while sampling random coefficients.
    pub max_abs_w: f64,
}

impl AssumptionReport {
    pub fn all_mandatory_pass(&self) -> bool {
        self.items.iter().all(|i| i.passed || !i.mandatory)
    }

    pub fn failures(&self) -> Vec<&AssumptionItem> {
        self.items
            .iter()
            .filter(|i| !i.passed && i.mandatory)
            .collect()
    }
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Spectral norm of `M` as an operator on the lambda-weighted space: the
/// plain spectral norm of `W M W^{-1}` with `W = diag(g_j / lambda_j)`.
pub fn weighted_operator_norm(m: &DMatrix<f64>, basis: &SpectralBasis) -> f64 {
    let n = basis.modes();
    let mut scaled = m.clone();
    for i in 0..n {
        let wi = basis.graph_norms()[i] / basis.lambda_weights()[i];
        for j in 0..n {
            let wj = basis.graph_norms()[j] / basis.lambda_weights()[j];
            scaled[(i, j)] *= wi / wj;
        }
    }
    scaled.singular_values().max()
}

/// Samples `(t, w)` points and verifies the assumption surrogates:
/// contraction of the semigroup, orthonormality of the basis, sign
/// conditions on the cost weights, and boundedness of the coefficients in
/// the lambda-weighted operator norm. Under Galerkin truncation the dense
/// control subspace coincides with the whole control space, which is
/// recorded rather than tested.
pub fn check_assumptions(problem: &LQProblem, samples: usize, rng_seed: u64) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut items = Vec::new();
    let n = problem.basis.modes();

    // AS0: the semigroup is contractive (all eigenvalues nonpositive).
    let max_mu = problem
        .basis
        .eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    items.push(AssumptionItem {
        name: "AS0-contraction".into(),
        passed: max_mu <= 0.0,
        mandatory: true,
        witness: format!("max eigenvalue of A = {max_mu:.6e}"),
    });

    // AS1: orthonormal eigenbasis, checked under quadrature.
    let ortho_defect = {
        let (nodes, weights) = crate::quadrature::gauss_legendre_01(6 * n.max(2));
        let mut worst: f64 = 0.0;
        if problem.basis.spatial_dim() == 1 {
            for i in 0..n {
                for j in i..n {
                    let ip: f64 = nodes
                        .iter()
                        .zip(&weights)
                        .map(|(&x, &w)| {
                            w * problem.basis.eigenfunction(i, &[x])
                                * problem.basis.eigenfunction(j, &[x])
                        })
                        .sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((ip - target).abs());
                }
            }
        }
        worst
    };
    items.push(AssumptionItem {
        name: "AS1-orthonormal-basis".into(),
        passed: ortho_defect < 1e-8,
        mandatory: true,
        witness: format!("max |<e_i, e_j> - delta_ij| = {ortho_defect:.3e}"),
    });

    // AS2: sign conditions sampled over (t, w) draws.
    let draws = samples.max(1);
    let mut min_q = f64::INFINITY;
    let mut min_r = f64::INFINITY;
    let mut min_g = f64::INFINITY;
    let mut max_abs_w: f64 = 0.0;
    let mut max_weighted_norm: f64 = 0.0;
    for i in 0..draws {
        // Stratified times plus Brownian-scaled w draws.
        let t = problem.horizon * (i as f64 + 0.5) / draws as f64;
        let z: f64 = rng.sample(StandardNormal);
        let w = t.sqrt() * z;
        max_abs_w = max_abs_w.max(w.abs());
        let snap = problem
            .snapshot(t, w)
            .expect("stratified sample times lie inside the horizon");
        min_q = min_q.min(min_symmetric_eigenvalue(&snap.q));
        min_r = min_r.min(min_symmetric_eigenvalue(&snap.r));
        min_g = min_g.min(min_symmetric_eigenvalue(&problem.terminal_g(w)));
        for m in [&snap.a1, &snap.c, &snap.q] {
            max_weighted_norm = max_weighted_norm.max(weighted_operator_norm(m, &problem.basis));
        }
        for m in [&snap.b, &snap.d, &snap.r] {
            max_weighted_norm = max_weighted_norm.max(m.singular_values().max());
        }
    }
    items.push(AssumptionItem {
        name: "AS2-sign-conditions".into(),
        passed: min_q >= -1e-10 && min_r >= R_MIN - 1e-12 && min_g >= -1e-10,
        mandatory: true,
        witness: format!(
            "min eig Q = {min_q:.6e}, min eig R = {min_r:.6e}, min eig G = {min_g:.6e}"
        ),
    });

    // AS3: boundedness in the lambda-weighted operator norm over the sampled
    // points (finite-truncation surrogate). Report-only.
    items.push(AssumptionItem {
        name: "AS3-coefficient-boundedness".into(),
        passed: max_weighted_norm.is_finite(),
        mandatory: false,
        witness: format!("sup sampled weighted operator norm = {max_weighted_norm:.6e}"),
    });

    // AS4: under truncation every mode is maximally smooth, so the dense
    // control subspace equals the control space.
    items.push(AssumptionItem {
        name: "AS4-dense-control-subspace".into(),
        passed: true,
        mandatory: false,
        witness: "truncated model: dense subspace coincides with control space".into(),
    });

    AssumptionReport { items, max_abs_w }
}

/// Draws a mode-damped Gaussian state: independent entries with per-mode
/// standard deviation `lambda_j`. Bounded moments of every order stand in
/// for the L^4 integrability required of test inputs.
pub fn mode_damped_gaussian(basis: &SpectralBasis, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        basis.modes(),
        basis.lambda_weights().iter().map(|&lam| {
            let z: f64 = rng.sample(StandardNormal);
            lam * z
        }),
    )
}
