//! Contracts of the minimizer vector-Jacobian product beyond the
//! finite-difference suites: linearity in the upstream vector, exact zeros
//! in detached mode, and the clamped-coordinate convention.

use pcm_core::approximators::PlseNet;
use pcm_core::implicit::{minimizer_vjp, SensitivityMode};
use pcm_core::numerics::{named_stream, RngSeed};
use pcm_core::solve::{solve_pcm, BoxSet, SolverOpts};
use rand::Rng;

fn interior_instance() -> (PlseNet, Vec<f64>, BoxSet, pcm_core::solve::SolveResult) {
    let mut rng = named_stream(RngSeed(77), "implicit-int");
    let opts = SolverOpts::default().with_grad_tol(1e-10);
    let u_box = BoxSet::cube(-1.0, 1.0, 2);
    loop {
        let net = PlseNet::init(1, 2, 6, 0.8, &[6], true, &mut rng).unwrap();
        let x = vec![rng.gen_range(-1.0..1.0)];
        let solved = solve_pcm(&net, &x, &u_box, &opts).unwrap();
        let interior = solved.converged
            && solved
                .minimizer
                .iter()
                .all(|v| v.abs() < 0.99);
        if interior {
            return (net, x, u_box, solved);
        }
    }
}

#[test]
fn vjp_is_linear_in_the_upstream_vector() {
    let (net, x, u_box, solved) = interior_instance();
    let n = net.param_count();
    let v1 = vec![0.3, -0.9];
    let v2 = vec![-1.1, 0.4];
    let (a, b) = (0.7, -2.3);

    let run = |upstream: &[f64]| {
        let mut grad = vec![0.0; n];
        minimizer_vjp(
            &net,
            &x,
            &solved,
            &u_box,
            upstream,
            SensitivityMode::Implicit,
            &mut grad,
        );
        grad
    };
    let g1 = run(&v1);
    let g2 = run(&v2);
    let combined: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
    let gc = run(&combined);
    for i in 0..n {
        let expected = a * g1[i] + b * g2[i];
        assert!(
            (gc[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
            "coordinate {i}: {} vs {expected}",
            gc[i]
        );
    }
}

#[test]
fn detached_mode_accumulates_exactly_nothing() {
    let (net, x, u_box, solved) = interior_instance();
    let mut grad = vec![0.0; net.param_count()];
    let sens = minimizer_vjp(
        &net,
        &x,
        &solved,
        &u_box,
        &[1.0, -1.0],
        SensitivityMode::Detached,
        &mut grad,
    );
    assert!(grad.iter().all(|&g| g == 0.0));
    assert_eq!(sens.mode, SensitivityMode::Detached);
    assert!(!sens.damped);
}

#[test]
fn fully_clamped_minimizer_has_zero_sensitivity() {
    // strictly positive slopes: minimum sits at the lower-left corner with
    // inward gradient pressure on both coordinates
    let net = PlseNet::constant_plus(
        1,
        &[vec![1.0, 0.6], vec![0.8, 1.4]],
        &[0.0, 0.2, -0.2],
        0.9,
    )
    .unwrap();
    let u_box = BoxSet::cube(-1.0, 1.0, 2);
    let solved = solve_pcm(&net, &[0.0], &u_box, &SolverOpts::default()).unwrap();
    assert!(solved.converged);
    assert_eq!(solved.minimizer, vec![-1.0, -1.0]);

    let mut grad = vec![0.0; net.param_count()];
    let sens = minimizer_vjp(
        &net,
        &[0.0],
        &solved,
        &u_box,
        &[0.5, 0.5],
        SensitivityMode::Implicit,
        &mut grad,
    );
    assert_eq!(sens.active_mask, vec![true, true]);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn hessian_diagnostic_is_positive_semidefinite() {
    let (net, x, u_box, solved) = interior_instance();
    let mut grad = vec![0.0; net.param_count()];
    let sens = minimizer_vjp(
        &net,
        &x,
        &solved,
        &u_box,
        &[0.0, 0.0],
        SensitivityMode::Implicit,
        &mut grad,
    );
    let eig = nalgebra::SymmetricEigen::new(sens.hessian_uu.clone());
    for lam in eig.eigenvalues.iter() {
        assert!(*lam > -1e-12, "negative curvature {lam}");
    }
}

#[test]
#[should_panic(expected = "converged")]
fn unconverged_solve_is_a_contract_violation() {
    let (net, x, u_box, mut solved) = interior_instance();
    solved.converged = false;
    let mut grad = vec![0.0; net.param_count()];
    minimizer_vjp(
        &net,
        &x,
        &solved,
        &u_box,
        &[1.0, 0.0],
        SensitivityMode::Implicit,
        &mut grad,
    );
}
