//! Gauss–Legendre quadrature.
//!
//! Nodes are the roots of the Legendre polynomial `P_n`, computed by Newton
//! iteration from the Chebyshev initial guess; weights are
//! `2 / ((1 - x^2) P_n'(x)^2)`. An n-point rule integrates polynomials of
//! degree `2n - 1` exactly.

/// Nodes and weights of the n-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are returned in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots are symmetric about zero; solve for the non-negative half.
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-based initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let delta = p / d;
            x -= delta;
            if delta.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Nodes and weights transplanted to `[0, 1]`.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Evaluates `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_rule_matches_closed_form() {
        let (x, w) = gauss_legendre(2);
        let r = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(x[0], -r, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], r, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn integrates_high_degree_polynomials_exactly() {
        // 5-point rule is exact through degree 9: check x^8 on [-1, 1].
        let (x, w) = gauss_legendre(5);
        let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(8)).sum();
        assert_abs_diff_eq!(approx, 2.0 / 9.0, epsilon = 1e-13);
    }

    #[test]
    fn unit_interval_rule_has_unit_mass() {
        for n in [1, 3, 8, 33] {
            let (x, w) = gauss_legendre_01(n);
            let mass: f64 = w.iter().sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-13);
            assert!(x.iter().all(|t| (0.0..=1.0).contains(t)));
        }
    }

    #[test]
    fn weights_are_positive_and_nodes_sorted() {
        let (x, w) = gauss_legendre(64);
        assert!(w.iter().all(|v| *v > 0.0));
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}
