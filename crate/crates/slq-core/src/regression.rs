//! Least-squares regression of matrix-valued targets on monomial features
//! of a scalar Brownian state.
//!
//! Conditional expectations `E[ M | W(t) = w ]` are approximated by fitting
//! each matrix entry to the features `{1, z, z^2, ..., z^d}` with
//! `z = (w - mean) / scale` standardized over the design sample. A rank
//! deficient design triggers an automatic degree reduction (recorded on the
//! model); a degenerate design (all `w` equal, e.g. at time zero) fits the
//! plain sample mean.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix};

/// Polynomial regression model for one matrix-valued conditional
/// expectation.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    requested_degree: usize,
    degree: usize,
    mean: f64,
    scale: f64,
    rows: usize,
    cols: usize,
    symmetrize: bool,
    /// Coefficient matrices per feature power, length `degree + 1`.
    coeffs: Vec<DMatrix<f64>>,
    /// True when the degree had to be reduced to fix rank deficiency.
    pub fell_back: bool,
    /// Crude condition estimate of the normal equations (ratio of extreme
    /// squared diagonal entries of the Cholesky factor).
    pub condition: f64,
}

impl RegressionModel {
    /// Fits targets on monomial features of `ws`. With `symmetrize` the
    /// predictions are symmetrized (used for solution fields that live in
    /// the symmetric class).
    pub fn fit(
        ws: &[f64],
        targets: &[DMatrix<f64>],
        degree: usize,
        symmetrize: bool,
    ) -> Result<Self> {
        if ws.is_empty() || ws.len() != targets.len() {
            return Err(Error::Contract(format!(
                "regression needs aligned nonempty samples: {} design points, {} targets",
                ws.len(),
                targets.len()
            )));
        }
        let rows = targets[0].nrows();
        let cols = targets[0].ncols();
        if targets.iter().any(|t| t.nrows() != rows || t.ncols() != cols) {
            return Err(Error::Contract(
                "regression targets must share one shape".into(),
            ));
        }
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<f64>() / n;
        let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let (start, scale) = if std < 1e-12 {
            (0, 1.0)
        } else {
            (degree, std)
        };
        let mut d = start;
        loop {
            match Self::try_fit(ws, targets, d, mean, scale, rows, cols) {
                Some((coeffs, condition)) => {
                    return Ok(Self {
                        requested_degree: degree,
                        degree: d,
                        mean,
                        scale,
                        rows,
                        cols,
                        symmetrize,
                        coeffs,
                        fell_back: d < start,
                        condition,
                    });
                }
                None => {
                    if d == 0 {
                        return Err(Error::Solver(
                            "regression failed even at degree zero".into(),
                        ));
                    }
                    d -= 1;
                }
            }
        }
    }

    fn try_fit(
        ws: &[f64],
        targets: &[DMatrix<f64>],
        d: usize,
        mean: f64,
        scale: f64,
        rows: usize,
        cols: usize,
    ) -> Option<(Vec<DMatrix<f64>>, f64)> {
        let nf = d + 1;
        // Normal equations from standardized power moments.
        let mut xtx = DMatrix::zeros(nf, nf);
        let mut xty = DMatrix::zeros(nf, rows * cols);
        let mut powers = vec![0.0; 2 * d + 1];
        for (w, target) in ws.iter().zip(targets) {
            let z = (w - mean) / scale;
            powers[0] = 1.0;
            for p in 1..=2 * d {
                powers[p] = powers[p - 1] * z;
            }
            for p in 0..nf {
                for q in p..nf {
                    xtx[(p, q)] += powers[p + q];
                }
                for r in 0..rows {
                    for c in 0..cols {
                        xty[(p, r * cols + c)] += powers[p] * target[(r, c)];
                    }
                }
            }
        }
        for p in 0..nf {
            for q in 0..p {
                xtx[(p, q)] = xtx[(q, p)];
            }
        }
        let chol = Cholesky::new(xtx)?;
        let diag = chol.l();
        let mut dmin = f64::INFINITY;
        let mut dmax: f64 = 0.0;
        for i in 0..nf {
            let v = diag[(i, i)];
            dmin = dmin.min(v);
            dmax = dmax.max(v);
        }
        if dmin <= 0.0 || !(dmax / dmin).is_finite() || (dmax / dmin) > 1e6 {
            // Numerically rank deficient even if the factorization ran.
            return None;
        }
        let sol = chol.solve(&xty);
        let coeffs = (0..nf)
            .map(|p| DMatrix::from_fn(rows, cols, |r, c| sol[(p, r * cols + c)]))
            .collect();
        Some((coeffs, (dmax / dmin) * (dmax / dmin)))
    }

    /// Predicts the matrix at Brownian value `w` (Horner evaluation).
    pub fn predict(&self, w: f64) -> DMatrix<f64> {
        let z = (w - self.mean) / self.scale;
        let mut acc = self.coeffs[self.degree].clone();
        for p in (0..self.degree).rev() {
            acc *= z;
            acc += &self.coeffs[p];
        }
        if self.symmetrize {
            let t = acc.transpose();
            acc += t;
            acc *= 0.5;
        }
        acc
    }

    /// Effective fitted degree (after any fallback).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn requested_degree(&self) -> usize {
        self.requested_degree
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Raw coefficient matrices in the standardized feature basis.
    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn standardization(&self) -> (f64, f64) {
        (self.mean, self.scale)
    }

    /// Root-mean-square Frobenius distance between two models over probe
    /// points.
    pub fn rms_distance(&self, other: &Self, probes: &[f64]) -> f64 {
        if probes.is_empty() {
            return 0.0;
        }
        let sum: f64 = probes
            .iter()
            .map(|&w| (self.predict(w) - other.predict(w)).norm_squared())
            .sum();
        (sum / probes.len() as f64).sqrt()
    }

    /// Largest Frobenius norm of the prediction over probe points.
    pub fn max_norm_on(&self, probes: &[f64]) -> f64 {
        probes
            .iter()
            .map(|&w| self.predict(w).norm())
            .fold(0.0, f64::max)
    }

    /// A model that predicts the given constant matrix everywhere.
    pub fn constant(matrix: DMatrix<f64>, symmetrize: bool) -> Self {
        Self {
            requested_degree: 0,
            degree: 0,
            mean: 0.0,
            scale: 1.0,
            rows: matrix.nrows(),
            cols: matrix.ncols(),
            symmetrize,
            coeffs: vec![matrix],
            fell_back: false,
            condition: 1.0,
        }
    }
}
