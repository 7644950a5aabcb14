//! Oracle and property tests for the eigenbasis module.
//!
//! Frozen expected values come from independent oracles: a high-resolution
//! finite-difference eigensolver for the Dirichlet Laplacian spectrum, a
//! 1e5-point trapezoid rule for multiplication-matrix entries, and scalar
//! closed forms for semigroup factors and weights.

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::DVector;
use proptest::prelude::*;
use slq_core::quadrature::gauss_legendre_01;
use slq_core::spectral::{multiplication_matrix, SpectralBasis};

const PI: f64 = std::f64::consts::PI;

#[test]
fn interval_eigenvalues_match_eigensolver_oracle() {
    // Oracle: -d^2/dx^2 with Dirichlet BC on 1e4 grid points gives
    // mu_j = -(j pi)^2 within 1e-7 relative; frozen at the analytic limit.
    let basis = SpectralBasis::dirichlet(1, 3).unwrap();
    let expected = [-9.869604401089358, -39.47841760435743, -88.82643960980423];
    for (got, want) in basis.eigenvalues().iter().zip(expected) {
        assert_relative_eq!(*got, want, max_relative = 1e-12);
    }
}

#[test]
fn lambda_weight_is_inverse_square_root_of_eigenvalue() {
    // m = 1: lambda_j = |mu_j|^{-1/2}, so lambda_1 = 1/pi.
    let basis = SpectralBasis::dirichlet(1, 1).unwrap();
    assert_relative_eq!(
        basis.lambda_weights()[0],
        0.3183098861837907,
        max_relative = 1e-14
    );
}

#[test]
fn eigenfunctions_are_orthonormal_under_quadrature() {
    let n = 6;
    let basis = SpectralBasis::dirichlet(1, n).unwrap();
    let (nodes, weights) = gauss_legendre_01(4 * n);
    for i in 0..n {
        for j in 0..n {
            let ip: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * basis.eigenfunction(i, &[x]) * basis.eigenfunction(j, &[x]))
                .sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(ip, expected, epsilon = 1e-12);
        }
    }
}

#[test]
fn square_domain_eigenvalues_sorted_and_orthonormal() {
    let basis = SpectralBasis::dirichlet(2, 5).unwrap();
    // Lowest tensor modes: (1,1), (1,2), (2,1), (2,2), (1,3).
    let expected = [-2.0, -5.0, -5.0, -8.0, -10.0].map(|c| c * PI * PI);
    for (got, want) in basis.eigenvalues().iter().zip(expected) {
        assert_relative_eq!(*got, want, max_relative = 1e-12);
    }
    let (nodes, weights) = gauss_legendre_01(24);
    for i in 0..5 {
        for j in 0..5 {
            let mut ip = 0.0;
            for (&x, &wx) in nodes.iter().zip(&weights) {
                for (&y, &wy) in nodes.iter().zip(&weights) {
                    ip += wx * wy * basis.eigenfunction(i, &[x, y]) * basis.eigenfunction(j, &[x, y]);
                }
            }
            let expected = if i == j { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(ip, expected, epsilon = 1e-10);
        }
    }
}

#[test]
fn rejects_empty_or_unsupported_construction() {
    assert!(SpectralBasis::dirichlet(1, 0).is_err());
    assert!(SpectralBasis::dirichlet(3, 4).is_err());
}

#[test]
fn hs_embedding_single_term_matches_closed_form() {
    // lambda_1^2 / g_1^2 = pi^{-2} / (1 + pi^4).
    let basis = SpectralBasis::dirichlet(1, 1).unwrap();
    assert_relative_eq!(
        basis.hs_embedding_partial_sum(1),
        0.0010295917031418282,
        max_relative = 1e-13
    );
}

#[test]
fn hs_embedding_empty_sum_is_zero() {
    let basis = SpectralBasis::dirichlet(1, 4).unwrap();
    assert_eq!(basis.hs_embedding_partial_sum(0), 0.0);
}

#[test]
fn hs_embedding_bounded_by_eigenvalue_series() {
    // Partial sums stay below 4 * sum_j |mu_j|^{-1} for m = 1.
    let basis = SpectralBasis::dirichlet(1, 128).unwrap();
    let bound: f64 = basis.eigenvalues().iter().map(|u| 4.0 / u.abs()).sum();
    assert!(basis.hs_embedding_partial_sum(128) < bound);
}

#[test]
fn multiplication_by_one_is_identity() {
    let basis = SpectralBasis::dirichlet(1, 5).unwrap();
    let m = multiplication_matrix(&|_| 1.0, &basis, 20, "one").unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(m.entries[(i, j)], expected, epsilon = 1e-10);
        }
    }
    assert!(m.symmetric);
}

#[test]
fn multiplication_by_constant_scales_identity() {
    let basis = SpectralBasis::dirichlet(1, 3).unwrap();
    let m = multiplication_matrix(&|_| -2.5, &basis, 12, "const").unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { -2.5 } else { 0.0 };
            assert_abs_diff_eq!(m.entries[(i, j)], expected, epsilon = 1e-10);
        }
    }
}

#[test]
fn multiplication_by_x_matches_trapezoid_oracle() {
    // Oracle: 1e5-point trapezoid rule for int_0^1 x 2 sin(pi x) sin(2 pi x) dx.
    let basis = SpectralBasis::dirichlet(1, 2).unwrap();
    let m = multiplication_matrix(&|x| x[0], &basis, 16, "x").unwrap();
    assert_relative_eq!(m.entries[(0, 1)], -0.18012654869748937, max_relative = 1e-10);
    assert_relative_eq!(m.entries[(1, 0)], m.entries[(0, 1)], max_relative = 1e-14);
    // Diagonal of multiplication by x is 1/2 by symmetry of sin^2 about 1/2.
    assert_abs_diff_eq!(m.entries[(0, 0)], 0.5, epsilon = 1e-12);
}

#[test]
fn multiplication_rejects_underresolved_quadrature() {
    let basis = SpectralBasis::dirichlet(1, 4).unwrap();
    assert!(multiplication_matrix(&|x| x[0], &basis, 7, "x").is_err());
}

#[test]
fn semigroup_at_zero_is_identity_and_scales_mode_one() {
    let basis = SpectralBasis::dirichlet(1, 2).unwrap();
    let v = DVector::from_vec(vec![1.0, -3.0]);
    assert_eq!(basis.semigroup_apply(0.0, &v).unwrap(), v);
    // Scalar exponential oracle: e^{-pi^2}.
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let out = basis.semigroup_apply(1.0, &e1).unwrap();
    assert_relative_eq!(out[0], 5.172318620381234e-05, max_relative = 1e-12);
    assert_eq!(out[1], 0.0);
}

#[test]
fn semigroup_rejects_negative_time() {
    let basis = SpectralBasis::dirichlet(1, 2).unwrap();
    let v = DVector::from_vec(vec![1.0, 0.0]);
    assert!(basis.semigroup_apply(-0.1, &v).is_err());
}

#[test]
fn weighted_norms_of_first_mode() {
    let basis = SpectralBasis::dirichlet(1, 3).unwrap();
    let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let (h, hl, hlp) = basis.weighted_norms(&e1).unwrap();
    assert_abs_diff_eq!(h, 1.0, epsilon = 1e-14);
    // |e_1|_{H_lambda} = g_1 / lambda_1 = pi sqrt(1 + pi^4).
    assert_relative_eq!(hl, 31.16502523625472, max_relative = 1e-12);
    // |e_1|_{H'_lambda} = lambda_1 / g_1.
    assert_relative_eq!(hlp, 0.032087251411453556, max_relative = 1e-12);
}

#[test]
fn weighted_norms_of_zero_vector_vanish() {
    let basis = SpectralBasis::dirichlet(1, 3).unwrap();
    let z = DVector::zeros(3);
    let (h, hl, hlp) = basis.weighted_norms(&z).unwrap();
    assert_eq!((h, hl, hlp), (0.0, 0.0, 0.0));
}

#[test]
fn projection_of_multiplication_operator_converges_with_truncation() {
    // Lemma-2.1 analogue: projecting the multiplication operator onto more
    // modes approaches its action on a fixed smooth function. Errors are
    // measured inside a large reference truncation.
    let reference = 64;
    let big = SpectralBasis::dirichlet(1, reference).unwrap();
    let alpha = |x: &[f64]| (2.0 * PI * x[0]).sin() + 0.5;
    let full = multiplication_matrix(&alpha, &big, 4 * reference, "alpha").unwrap();
    // Coefficients of f(x) = x(1-x) in the sine basis.
    let (nodes, weights) = gauss_legendre_01(4 * reference);
    let f_coords = DVector::from_iterator(
        reference,
        (0..reference).map(|j| {
            nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * x * (1.0 - x) * big.eigenfunction(j, &[x]))
                .sum::<f64>()
        }),
    );
    let exact = &full.entries * &f_coords;
    let mut errors = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let mut projected = f_coords.clone();
        for j in n..reference {
            projected[j] = 0.0;
        }
        let mut image = &full.entries * &projected;
        for j in n..reference {
            image[j] = 0.0;
        }
        errors.push((&image - &exact).norm());
    }
    for pair in errors.windows(2) {
        assert!(
            pair[1] < pair[0],
            "projection error should decrease: {errors:?}"
        );
    }
}

#[test]
fn flat_shadow_has_unit_weights_and_identity_semigroup() {
    let basis = SpectralBasis::flat(3);
    assert_eq!(basis.eigenvalues(), &[0.0, 0.0, 0.0]);
    let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(basis.semigroup_apply(5.0, &v).unwrap(), v);
}

proptest! {
    #[test]
    fn semigroup_contracts(dt in 0.0f64..3.0, coords in proptest::collection::vec(-10.0f64..10.0, 4)) {
        let basis = SpectralBasis::dirichlet(1, 4).unwrap();
        let v = DVector::from_vec(coords);
        let out = basis.semigroup_apply(dt, &v).unwrap();
        prop_assert!(out.norm() <= v.norm());
    }

    #[test]
    fn semigroup_law_composes(s in 0.0f64..1.5, t in 0.0f64..1.5, coords in proptest::collection::vec(-10.0f64..10.0, 4)) {
        let basis = SpectralBasis::dirichlet(1, 4).unwrap();
        let v = DVector::from_vec(coords);
        let joint = basis.semigroup_apply(s + t, &v).unwrap();
        let chained = basis
            .semigroup_apply(s, &basis.semigroup_apply(t, &v).unwrap())
            .unwrap();
        prop_assert!((joint - chained).norm() <= 1e-12 * (1.0 + v.norm()));
    }

    #[test]
    fn hs_partial_sums_monotone_with_decreasing_terms(n in 1usize..64) {
        let basis = SpectralBasis::dirichlet(1, 64).unwrap();
        let prev = basis.hs_embedding_partial_sum(n - 1);
        let cur = basis.hs_embedding_partial_sum(n);
        prop_assert!(cur >= prev);
        if n >= 2 {
            let term_prev = prev - basis.hs_embedding_partial_sum(n - 2);
            let term_cur = cur - prev;
            prop_assert!(term_cur < term_prev);
        }
    }
}
