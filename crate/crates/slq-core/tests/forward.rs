//! Contract tests for the forward simulator: exactness on decoupled modes,
//! martingale sanity, variation-of-constants convergence, flow-map
//! linearity, cost quadrature, and reproducibility.

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slq_core::forward::{
    evaluate_cost, flow_map, simulate, ConstGain, Control, Forcing, TimeGrid,
};
use slq_core::presets;
use slq_core::problem::{CoefficientProcess, LQProblem};
use slq_core::spectral::SpectralBasis;
use slq_core::Error;

const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

/// Heat equation with every dynamic coefficient off: pure semigroup decay.
fn pure_decay(modes: usize, steps: usize) -> LQProblem {
    let basis = SpectralBasis::dirichlet(1, modes).unwrap();
    slq_core::problem::from_parabolic_spec(
        &|_| 0.0,
        &|_| 0.0,
        &|_| 0.0,
        &|_| 0.0,
        &|_| 0.0,
        &|_| 1.0,
        &|_| 1.0,
        &basis,
        1.0,
        steps,
    )
    .unwrap()
}

fn scalar_flat(
    a1: f64,
    b: f64,
    c: f64,
    q: f64,
    r: f64,
    g: f64,
    horizon: f64,
    steps: usize,
) -> LQProblem {
    let m = |v: f64| CoefficientProcess::constant(DMatrix::from_element(1, 1, v));
    LQProblem::new(
        SpectralBasis::flat(1),
        horizon,
        m(a1),
        m(b),
        m(c),
        m(0.0),
        m(q),
        m(r),
        m(g),
        1,
        steps,
    )
    .unwrap()
}

// --- exactness and convergence ----------------------------------------------

#[test]
fn pure_heat_decay_is_exact_and_paths_coincide() {
    let p = pure_decay(1, 200);
    let grid = TimeGrid::for_problem(&p);
    let init = DVector::from_element(1, 1.0);
    let bundle = simulate(&p, &grid, &init, &Control::Zero, None, None, 3, 11).unwrap();
    let exact = (-PI2).exp();
    for path in &bundle.states {
        assert_eq!(path[0], init, "initial state must be stored unchanged");
        assert_relative_eq!(path[200][0], exact, max_relative = 1e-12);
    }
    assert_eq!(bundle.states[0][200], bundle.states[2][200]);
}

#[test]
fn stochastic_exponential_has_unit_mean() {
    // dx = x dW on a flat mode: x(T) is a stochastic exponential, and the
    // discrete product prod_k (1 + dW_k) has exact mean 1.
    let p = scalar_flat(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 100);
    let grid = TimeGrid::for_problem(&p);
    let init = DVector::from_element(1, 1.0);
    let bundle = simulate(&p, &grid, &init, &Control::Zero, None, None, 10_000, 17).unwrap();
    let finals: Vec<f64> = bundle.states.iter().map(|s| s[100][0]).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
        / (finals.len() as f64 - 1.0);
    let se = (var / finals.len() as f64).sqrt();
    assert!(
        (mean - 1.0).abs() < 3.0 * se,
        "martingale mean violated: mean = {mean}, se = {se}"
    );
}

#[test]
fn constant_drift_forcing_matches_variation_of_constants() {
    let c = 2.0;
    let exact = (-PI2).exp() + c * (1.0 - (-PI2).exp()) / PI2;
    let mut errors = Vec::new();
    for steps in [200usize, 400] {
        let p = pure_decay(1, steps);
        let grid = TimeGrid::for_problem(&p);
        let forcing: Vec<DVector<f64>> = vec![DVector::from_element(1, c); steps];
        let bundle = simulate(
            &p,
            &grid,
            &DVector::from_element(1, 1.0),
            &Control::Zero,
            Some(&Forcing::Shared(&forcing)),
            None,
            1,
            5,
        )
        .unwrap();
        errors.push((bundle.states[0][steps][0] - exact).abs());
    }
    assert!(
        errors[0] / exact < 0.04,
        "variation-of-constants error too large: {:.3e}",
        errors[0]
    );
    let ratio = errors[1] / errors[0];
    assert!(
        (0.35..=0.65).contains(&ratio),
        "error must halve when steps double; got ratio {ratio:.3}"
    );
}

// --- flow map ----------------------------------------------------------------

#[test]
fn zero_initial_state_gives_zero_flow() {
    let p = presets::heat_1d_random(3, 1.0, 50).unwrap();
    let grid = TimeGrid::for_problem(&p);
    let theta = ConstGain(DMatrix::identity(3, 3) * 0.1);
    let bundle = flow_map(&p, &theta, &grid, 0.0, &DVector::zeros(3), 4, 23).unwrap();
    for path in &bundle.states {
        for x in path {
            assert_eq!(x.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
        }
    }
}

#[test]
fn flow_map_is_linear_in_the_initial_state() {
    let p = presets::heat_1d_random(3, 1.0, 60).unwrap();
    let grid = TimeGrid::for_problem(&p);
    let theta = ConstGain(DMatrix::identity(3, 3) * -0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xi1 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let xi2 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let (a, b) = (2.0, -1.5);
    let combo = &xi1 * a + &xi2 * b;
    let seed = 91;
    let f1 = flow_map(&p, &theta, &grid, 0.25, &xi1, 8, seed).unwrap();
    let f2 = flow_map(&p, &theta, &grid, 0.25, &xi2, 8, seed).unwrap();
    let fc = flow_map(&p, &theta, &grid, 0.25, &combo, 8, seed).unwrap();
    for i in 0..8 {
        for k in 0..f1.states[i].len() {
            let lin = &f1.states[i][k] * a + &f2.states[i][k] * b;
            assert!(
                (&fc.states[i][k] - &lin).abs().max() < 1e-12,
                "superposition defect at path {i}, step {k}"
            );
        }
    }
}

#[test]
fn deterministic_flow_matches_matrix_exponential() {
    // a1(x) = x as a multiplication operator, no noise: the flow over [0, T]
    // is e^{(A + A1) T}, compared column by column.
    let basis = SpectralBasis::dirichlet(1, 2).unwrap();
    let p = slq_core::problem::from_parabolic_spec(
        &|x| x[0],
        &|_| 0.0,
        &|_| 0.0,
        &|_| 0.0,
        &|_| 0.0,
        &|_| 1.0,
        &|_| 1.0,
        &basis,
        0.5,
        400,
    )
    .unwrap();
    let grid = TimeGrid::for_problem(&p);
    let theta = ConstGain(DMatrix::zeros(2, 2));
    let a_full = DMatrix::from_diagonal(&DVector::from_iterator(
        2,
        p.basis.eigenvalues().iter().copied(),
    )) + p.a1.eval(0.0, 0.0);
    let reference = (a_full * 0.5).exp();
    let mut numeric = DMatrix::zeros(2, 2);
    for j in 0..2 {
        let mut e = DVector::zeros(2);
        e[j] = 1.0;
        let bundle = flow_map(&p, &theta, &grid, 0.0, &e, 1, 3).unwrap();
        numeric.set_column(j, &bundle.states[0][400]);
    }
    let rel = (&numeric - &reference).norm() / reference.norm();
    assert!(
        rel < 0.02,
        "flow map deviates from matrix exponential: rel = {rel:.3e}\nnumeric {numeric} reference {reference}"
    );
}

// --- cost evaluation ----------------------------------------------------------

#[test]
fn zero_trajectory_zero_control_has_zero_cost() {
    let p = presets::null_problem(2, 1.0, 20);
    let grid = TimeGrid::for_problem(&p);
    let bundle = simulate(&p, &grid, &DVector::zeros(2), &Control::Zero, None, None, 3, 1).unwrap();
    let report = evaluate_cost(&p, &bundle, None, true).unwrap();
    assert_eq!(report.mean, 0.0);
    assert_eq!(report.std_error, 0.0);
    assert!(report.per_path.unwrap().iter().all(|&c| c == 0.0));
}

#[test]
fn constant_control_cost_is_exact() {
    // Q = 0, G = 0, B = 0, R = 1: cost is (1/2) c^2 T independent of steps.
    let p = scalar_flat(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 37);
    let grid = TimeGrid::for_problem(&p);
    let c = 1.5;
    let controls: Vec<DVector<f64>> = vec![DVector::from_element(1, c); 37];
    let bundle = simulate(
        &p,
        &grid,
        &DVector::zeros(1),
        &Control::OpenLoop(&controls),
        None,
        None,
        2,
        9,
    )
    .unwrap();
    let report = evaluate_cost(&p, &bundle, None, false).unwrap();
    assert_relative_eq!(report.mean, 0.5 * c * c, epsilon = 1e-13);
    assert_eq!(report.std_error, 0.0);
}

#[test]
fn heat_decay_terminal_cost_is_closed_form() {
    let p = pure_decay(1, 150);
    let grid = TimeGrid::for_problem(&p);
    let bundle = simulate(
        &p,
        &grid,
        &DVector::from_element(1, 1.0),
        &Control::Zero,
        None,
        None,
        1,
        2,
    )
    .unwrap();
    let report = evaluate_cost(&p, &bundle, None, false).unwrap();
    assert_relative_eq!(report.mean, 0.5 * (-2.0 * PI2).exp(), max_relative = 1e-12);
}

#[test]
fn cost_rejects_misaligned_controls() {
    let p = presets::scalar_benchmark(1.0, 10);
    let grid = TimeGrid::for_problem(&p);
    let bundle =
        simulate(&p, &grid, &DVector::zeros(1), &Control::Zero, None, None, 2, 3).unwrap();
    let bad = vec![vec![DVector::zeros(1); 7]; 2]; // 7 != 10 steps
    assert!(matches!(
        evaluate_cost(&p, &bundle, Some(&bad), false),
        Err(Error::Contract(_))
    ));
}

// --- reproducibility and consistency ------------------------------------------

#[test]
fn identical_seed_reproduces_bundles_bitwise() {
    let p = presets::heat_1d_random(2, 1.0, 40).unwrap();
    let grid = TimeGrid::for_problem(&p);
    let init = DVector::from_element(2, 0.7);
    let run = || {
        simulate(&p, &grid, &init, &Control::Zero, None, None, 16, 1234).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.states, b.states);
    assert_eq!(a.increments, b.increments);
    assert_eq!(a.w, b.w);
    let other = simulate(&p, &grid, &init, &Control::Zero, None, None, 16, 1235).unwrap();
    assert_ne!(a.increments, other.increments);
}

#[test]
fn closed_loop_replay_from_recorded_controls_is_identical() {
    let p = presets::heat_1d_random(2, 1.0, 50).unwrap();
    let grid = TimeGrid::for_problem(&p);
    let theta = ConstGain(DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.0, 0.2]));
    let init = DVector::from_element(2, 1.0);
    let closed = simulate(
        &p,
        &grid,
        &init,
        &Control::Feedback(&theta),
        None,
        None,
        16,
        77,
    )
    .unwrap();
    let recorded = closed.controls.clone().unwrap();
    let replay = simulate(
        &p,
        &grid,
        &init,
        &Control::OpenLoopPerPath(&recorded),
        None,
        None,
        16,
        77,
    )
    .unwrap();
    assert_eq!(closed.states, replay.states);
}

#[test]
fn brownian_increments_have_sane_moments() {
    let p = presets::scalar_benchmark(1.0, 50);
    let grid = TimeGrid::for_problem(&p);
    let bundle = simulate(
        &p,
        &grid,
        &DVector::zeros(1),
        &Control::Zero,
        None,
        None,
        2000,
        31,
    )
    .unwrap();
    let (mean, var) = bundle.increment_moments();
    let n = (2000 * 50) as f64;
    let dt = grid.dt();
    let se_mean = (dt / n).sqrt();
    let se_var = dt * (2.0 / (n - 1.0)).sqrt();
    assert!(mean.abs() < 5.0 * se_mean, "mean {mean} vs se {se_mean}");
    assert!(
        (var - dt).abs() < 5.0 * se_var,
        "variance {var} vs dt {dt} (se {se_var})"
    );
}

// --- error paths ----------------------------------------------------------------

#[test]
fn contract_violations_are_reported() {
    let p = presets::scalar_benchmark(1.0, 10);
    let grid = TimeGrid::for_problem(&p);
    // Wrong initial length.
    assert!(matches!(
        simulate(&p, &grid, &DVector::zeros(2), &Control::Zero, None, None, 1, 0),
        Err(Error::Contract(_))
    ));
    // Grid beyond the horizon.
    let long = TimeGrid::new(0.0, 2.0, 10).unwrap();
    assert!(matches!(
        simulate(&p, &long, &DVector::zeros(1), &Control::Zero, None, None, 1, 0),
        Err(Error::Contract(_))
    ));
    // Misaligned open-loop control.
    let controls = vec![DVector::zeros(1); 3];
    assert!(matches!(
        simulate(
            &p,
            &grid,
            &DVector::zeros(1),
            &Control::OpenLoop(&controls),
            None,
            None,
            1,
            0
        ),
        Err(Error::Contract(_))
    ));
    // Off-grid times.
    assert!(grid.index_of(0.123).is_err());
    assert_eq!(grid.index_of(0.3).unwrap(), 3);
    assert!(grid.suffix_from(1.0).is_err());
    let sub = grid.suffix_from(0.3).unwrap();
    assert_eq!(sub.steps(), 7);
    assert_relative_eq!(sub.t0(), 0.3, epsilon = 1e-12);
}

#[test]
fn state_blowup_names_path_and_step() {
    let p = scalar_flat(1e9, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 50);
    let grid = TimeGrid::for_problem(&p);
    let err = simulate(
        &p,
        &grid,
        &DVector::from_element(1, 1.0),
        &Control::Zero,
        None,
        None,
        1,
        0,
    )
    .unwrap_err();
    match err {
        Error::Simulation(msg) => {
            assert!(msg.contains("path 0"), "message lacks the path: {msg}");
            assert!(msg.contains("step"), "message lacks the step: {msg}");
        }
        other => panic!("expected a simulation error, got {other:?}"),
    }
}

#[test]
fn empty_grid_is_rejected() {
    assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    assert!(TimeGrid::new(1.0, 1.0, 5).is_err());
    assert!(TimeGrid::new(2.0, 1.0, 5).is_err());
}

// --- properties -------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Costs are nonnegative path by path whenever the sign conditions hold.
    #[test]
    fn per_path_costs_are_nonnegative(seed in 0u64..1_000, amp in -2.0f64..2.0) {
        let p = presets::scalar_benchmark(1.0, 20);
        let grid = TimeGrid::for_problem(&p);
        let controls: Vec<DVector<f64>> = (0..20)
            .map(|k| DVector::from_element(1, amp * ((k as f64) * 0.4).sin()))
            .collect();
        let bundle = simulate(
            &p,
            &grid,
            &DVector::from_element(1, 1.0),
            &Control::OpenLoop(&controls),
            None,
            None,
            8,
            seed,
        )
        .unwrap();
        let report = evaluate_cost(&p, &bundle, None, true).unwrap();
        for c in report.per_path.unwrap() {
            prop_assert!(c >= 0.0);
        }
    }

    /// The Brownian storage is consistent: W values are prefix sums of the
    /// increments.
    #[test]
    fn brownian_values_are_prefix_sums(seed in 0u64..1_000) {
        let p = presets::scalar_benchmark(1.0, 30);
        let grid = TimeGrid::for_problem(&p);
        let bundle = simulate(&p, &grid, &DVector::zeros(1), &Control::Zero, None, None, 4, seed).unwrap();
        for i in 0..4 {
            let mut acc = bundle.w[i][0];
            for k in 0..30 {
                acc += bundle.increments[i][k];
                prop_assert!((bundle.w[i][k + 1] - acc).abs() < 1e-12);
            }
        }
    }
}

// Deterministic problems must produce identical coefficient snapshots on
// cached and live paths; exercised by simulating the same problem flagged
// as Brownian through a wrapper that ignores w.
#[test]
fn cached_and_live_coefficient_paths_agree() {
    let det = presets::heat_1d_deterministic(2, 1.0, 30).unwrap();
    let wrapped = LQProblem::new(
        det.basis.clone(),
        det.horizon,
        {
            let a1 = det.a1.clone();
            CoefficientProcess::brownian(move |t, _w| a1.eval(t, 0.0))
        },
        det.b.clone(),
        det.c.clone(),
        det.d.clone(),
        det.q.clone(),
        det.r.clone(),
        det.g.clone(),
        det.control_dim,
        det.time_steps,
    )
    .unwrap();
    assert!(!wrapped.is_deterministic());
    let grid = TimeGrid::for_problem(&det);
    let init = DVector::from_element(2, 0.5);
    let a = simulate(&det, &grid, &init, &Control::Zero, None, None, 4, 55).unwrap();
    let b = simulate(&wrapped, &grid, &init, &Control::Zero, None, None, 4, 55).unwrap();
    for i in 0..4 {
        assert_abs_diff_eq!(a.states[i][30], b.states[i][30], epsilon = 1e-14);
    }
}
