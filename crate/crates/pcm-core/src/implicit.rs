//! Gradient of the convex-minorant minimizer with respect to the minorant's
//! parameters, delivered as a vector-Jacobian product.
//!
//! At an interior minimizer the stationarity condition `grad_u f(x, u*) = 0`
//! defines `u*` implicitly, so `d u*/d theta = -H^{-1} d(grad_u f)/d theta`
//! with `H` the analytic LSE Hessian in `u` (the slopes depend only on `x`,
//! which keeps `H` exact and cheap). Coordinates clamped at a box bound with
//! inward gradient pressure are locally constant and contribute nothing.

use crate::approximators::{PlseCache, PlseNet};
use crate::numerics::dot;
use crate::solve::{BoxSet, SolveResult};
use nalgebra::{DMatrix, DVector};

/// Distance to a bound below which a coordinate counts as clamped.
const ACTIVE_TOL: f64 = 1e-9;
/// Tikhonov damping applied when the free-block Hessian is near singular.
const DAMPING: f64 = 1e-8;
/// Condition-number threshold that triggers the damped solve.
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMode {
    /// Differentiate through the solve via the implicit function theorem.
    Implicit,
    /// Treat the minimizer as a constant (stop-gradient).
    Detached,
}

/// Diagnostics of one vector-Jacobian product.
#[derive(Debug, Clone)]
pub struct MinimizerSensitivity {
    /// Coordinates treated as clamped at a box bound.
    pub active_mask: Vec<bool>,
    /// Analytic Hessian in `u` at the minimizer (full, not restricted).
    pub hessian_uu: DMatrix<f64>,
    pub mode: SensitivityMode,
    /// Whether the near-singular fallback `H + lambda I` was used.
    pub damped: bool,
}

/// Accumulates `upstream^T du*/dtheta` into `grad_acc` (the minorant's flat
/// parameter layout) and returns diagnostics.
///
/// `solve` must be a converged result of minimizing `net` over `u_box` at
/// `x`; passing an unconverged solve is a contract violation and panics.
/// Detached mode accumulates nothing and reports an empty mask.
pub fn minimizer_vjp(
    net: &PlseNet,
    x: &[f64],
    solve: &SolveResult,
    u_box: &BoxSet,
    upstream: &[f64],
    mode: SensitivityMode,
    grad_acc: &mut [f64],
) -> MinimizerSensitivity {
    let cache = net.forward_cached(x);
    minimizer_vjp_cached(net, &cache, solve, u_box, upstream, mode, grad_acc)
}

/// As [`minimizer_vjp`] but reusing subnetwork forward passes at `x`.
pub fn minimizer_vjp_cached(
    net: &PlseNet,
    cache: &PlseCache,
    solve: &SolveResult,
    u_box: &BoxSet,
    upstream: &[f64],
    mode: SensitivityMode,
    grad_acc: &mut [f64],
) -> MinimizerSensitivity {
    let m = net.u_dim();
    assert_eq!(upstream.len(), m, "upstream dim mismatch");
    assert_eq!(grad_acc.len(), net.param_count(), "grad buffer mismatch");

    if mode == SensitivityMode::Detached {
        return MinimizerSensitivity {
            active_mask: vec![false; m],
            hessian_uu: DMatrix::zeros(m, m),
            mode,
            damped: false,
        };
    }
    assert!(solve.converged, "implicit mode requires a converged solve");

    let u_star = &solve.minimizer;
    let (_, grad_u, weights) = net.eval_from_cache(cache, u_star);

    // Full analytic Hessian: softmax covariance of the slopes over T.
    let mut hessian = DMatrix::zeros(m, m);
    for (a, &w) in cache.slopes.iter().zip(&weights) {
        for i in 0..m {
            for j in 0..m {
                hessian[(i, j)] += w * a[i] * a[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            hessian[(i, j)] = (hessian[(i, j)] - grad_u[i] * grad_u[j]) / net.temperature;
        }
    }

    let active_mask: Vec<bool> = (0..m)
        .map(|i| {
            (u_star[i] - u_box.lower()[i] <= ACTIVE_TOL && grad_u[i] > 0.0)
                || (u_box.upper()[i] - u_star[i] <= ACTIVE_TOL && grad_u[i] < 0.0)
        })
        .collect();
    let free: Vec<usize> = (0..m).filter(|&i| !active_mask[i]).collect();
    if free.is_empty() {
        // fully clamped minimizer: locally constant in theta
        return MinimizerSensitivity {
            active_mask,
            hessian_uu: hessian,
            mode,
            damped: false,
        };
    }

    let k = free.len();
    let mut h_free = DMatrix::zeros(k, k);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            h_free[(r, c)] = hessian[(i, j)];
        }
    }
    let v_free = DVector::from_iterator(k, free.iter().map(|&i| upstream[i]));

    // Solve H w = upstream on the free block through a symmetric
    // eigendecomposition, which doubles as the condition estimate.
    let eig = nalgebra::SymmetricEigen::new(h_free);
    let lambda_max = eig.eigenvalues.amax();
    let lambda_min = eig.eigenvalues.min();
    let damped = !(lambda_min > 0.0 && lambda_max / lambda_min < COND_LIMIT);
    let mut coeffs = eig.eigenvectors.transpose() * &v_free;
    for (r, s) in coeffs.iter_mut().enumerate() {
        *s /= eig.eigenvalues[r] + if damped { DAMPING } else { 0.0 };
    }
    let w_free = eig.eigenvectors * coeffs;

    let mut w = vec![0.0; m];
    for (r, &i) in free.iter().enumerate() {
        w[i] = w_free[r];
    }

    // d u*/d theta = -H^{-1} d(grad_u f)/d theta, so the VJP is
    // -d[w^T grad_u f]/d theta with u* held fixed. With logits
    // s_i = (<a_i, u> + b_i)/T, p = softmax(s), grad_u f = sum_i p_i a_i:
    //   d[w^T grad_u f] = sum_i p_i (c_i - cbar) ds_i + sum_i p_i <w, da_i>,
    // where c_i = <w, a_i> and cbar = sum_j p_j c_j.
    let c: Vec<f64> = cache.slopes.iter().map(|a| dot(&w, a)).collect();
    let cbar: f64 = weights.iter().zip(&c).map(|(p, ci)| p * ci).sum();
    let t = net.temperature;
    let slope_ups: Vec<Vec<f64>> = (0..net.term_count())
        .map(|i| {
            let coeff = -weights[i] * (c[i] - cbar) / t;
            u_star
                .iter()
                .zip(&w)
                .map(|(&ui, &wi)| coeff * ui - weights[i] * wi)
                .collect()
        })
        .collect();
    let offset_ups: Vec<f64> = (0..net.term_count())
        .map(|i| -weights[i] * (c[i] - cbar) / t)
        .collect();
    net.terms_backprop(cache, &slope_ups, &offset_ups, grad_acc);

    MinimizerSensitivity {
        active_mask,
        hessian_uu: hessian,
        mode,
        damped,
    }
}
