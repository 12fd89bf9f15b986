//! Box-constrained minimization: projected Newton / projected gradient with
//! Armijo backtracking for smooth convex objectives, a DCA outer loop for
//! difference-of-LSE objectives, deterministic multistart for non-convex
//! nets, and an exhaustive grid oracle for tests and metrics.

use crate::approximators::{AffineTerm, DlseNet, Fnn, LseNet, PlseNet};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("objective returned a non-finite value at {at:?}")]
    NonFinite { at: Vec<f64> },
    #[error("grid of {requested} points per dim in {dim} dims exceeds the {limit} point budget")]
    GridTooLarge {
        requested: usize,
        dim: usize,
        limit: u64,
    },
}

/// Axis-aligned feasible set with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    /// Panics unless `lower <= upper` componentwise and both are finite.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bound length mismatch");
        assert!(!lower.is_empty(), "empty box");
        for (l, u) in lower.iter().zip(&upper) {
            assert!(l.is_finite() && u.is_finite(), "bounds must be finite");
            assert!(l <= u, "lower bound {l} exceeds upper bound {u}");
        }
        BoxSet { lower, upper }
    }

    /// The same interval replicated over `dim` coordinates.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Self {
        BoxSet::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn project(&self, u: &mut [f64]) {
        debug_assert_eq!(u.len(), self.dim());
        for ((v, l), h) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn projected(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        self.project(&mut out);
        out
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, l), h)| *v >= l - tol && *v <= h + tol)
    }
}

/// Outcome of one minimization. The minimizer satisfies the box exactly
/// (it is the image of a projection) and `value` is the objective there.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOpts {
    /// Stationarity tolerance on `||u - proj(u - grad)||_inf`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Take Newton steps whenever the objective provides a Hessian.
    pub use_newton: bool,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub multistart_count: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            grad_tol: 1e-8,
            max_iters: 500,
            use_newton: true,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            multistart_count: 8,
        }
    }
}

impl SolverOpts {
    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }
}

/// Smooth objective over a vector variable. The Hessian is optional; the
/// solver falls back to projected gradient without it.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    /// Writes the gradient and returns the value.
    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;
    fn hessian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl SmoothObjective for LseNet {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.eval(u)
    }

    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (v, g) = self.eval_with_grad(u);
        grad.copy_from_slice(&g);
        v
    }

    fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(LseNet::hessian(self, u))
    }
}

/// Convex quadratic `u' P u + q' u + c` with `P` symmetric PSD.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c: f64,
}

impl SmoothObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn value(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        (v.transpose() * &self.p * &v)[(0, 0)] + self.q.dot(&v) + self.c
    }

    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        let g = &self.p * &v * 2.0 + &self.q;
        grad.copy_from_slice(g.as_slice());
        (v.transpose() * &self.p * &v)[(0, 0)] + self.q.dot(&v) + self.c
    }

    fn hessian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(&self.p * 2.0)
    }
}

/// A scalar-output net restricted to `u` at fixed `x`; the Hessian comes
/// from central differences of the analytic gradient (the net itself is
/// generally non-convex, so this only serves local steps).
pub struct FnnOverU<'a> {
    pub net: &'a Fnn,
    pub x: &'a [f64],
}

impl FnnOverU<'_> {
    fn stack(&self, u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.x.len() + u.len());
        z.extend_from_slice(self.x);
        z.extend_from_slice(u);
        z
    }
}

impl SmoothObjective for FnnOverU<'_> {
    fn dim(&self) -> usize {
        self.net.input_dim() - self.x.len()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.net.eval_scalar(&self.stack(u))
    }

    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let z = self.stack(u);
        let cache = self.net.forward_cached(&z);
        let gz = self.net.backprop(&cache, &[1.0], None);
        grad.copy_from_slice(&gz[self.x.len()..]);
        cache.output()[0]
    }

    fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        let m = u.len();
        let h = 1e-5;
        let mut hess = DMatrix::zeros(m, m);
        let mut work = u.to_vec();
        let mut gp = vec![0.0; m];
        let mut gm = vec![0.0; m];
        for j in 0..m {
            let orig = work[j];
            work[j] = orig + h;
            self.value_grad(&work, &mut gp);
            work[j] = orig - h;
            self.value_grad(&work, &mut gm);
            work[j] = orig;
            for i in 0..m {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // symmetrize
        for i in 0..m {
            for j in (i + 1)..m {
                let s = 0.5 * (hess[(i, j)] + hess[(j, i)]);
                hess[(i, j)] = s;
                hess[(j, i)] = s;
            }
        }
        Some(hess)
    }
}

fn projected_gradient_norm(u: &[f64], grad: &[f64], feasible: &BoxSet) -> f64 {
    let mut step: Vec<f64> = u.iter().zip(grad).map(|(ui, gi)| ui - gi).collect();
    feasible.project(&mut step);
    u.iter()
        .zip(&step)
        .map(|(ui, si)| (ui - si).abs())
        .fold(0.0, f64::max)
}

/// Coordinates pressed against a bound with inward gradient pressure.
fn active_mask_at(u: &[f64], grad: &[f64], feasible: &BoxSet, tol: f64) -> Vec<bool> {
    u.iter()
        .zip(grad)
        .zip(feasible.lower().iter().zip(feasible.upper()))
        .map(|((ui, gi), (lo, hi))| (ui - lo <= tol && *gi > 0.0) || (hi - ui <= tol && *gi < 0.0))
        .collect()
}

/// Newton direction on the free block, steepest descent on the clamped one.
/// Falls back to `None` when the (damped) factorization fails.
fn newton_direction(
    hess: &DMatrix<f64>,
    grad: &[f64],
    active: &[bool],
) -> Option<Vec<f64>> {
    let free: Vec<usize> = (0..grad.len()).filter(|&i| !active[i]).collect();
    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    if free.is_empty() {
        return Some(dir);
    }
    let k = free.len();
    let mut hf = DMatrix::zeros(k, k);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            hf[(r, c)] = hess[(i, j)];
        }
    }
    let gf = DVector::from_iterator(k, free.iter().map(|&i| grad[i]));
    let scale = hf.diagonal().amax().max(1.0);
    let mut damping = 0.0;
    for _ in 0..8 {
        let mut m = hf.clone();
        for d in 0..k {
            m[(d, d)] += damping;
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            let step = chol.solve(&gf);
            for (r, &i) in free.iter().enumerate() {
                dir[i] = -step[r];
            }
            return Some(dir);
        }
        damping = if damping == 0.0 {
            1e-10 * scale
        } else {
            damping * 100.0
        };
    }
    None
}

/// Projected Newton / projected gradient with Armijo backtracking along the
/// projection arc. For convex objectives the returned stationary point is
/// the global box-constrained minimum. Deterministic: the default start is
/// the box center.
pub fn minimize_smooth(
    obj: &impl SmoothObjective,
    feasible: &BoxSet,
    opts: &SolverOpts,
    start: Option<&[f64]>,
) -> Result<SolveResult, SolveError> {
    assert_eq!(obj.dim(), feasible.dim(), "objective/box dim mismatch");
    let t0 = Instant::now();
    let n = obj.dim();
    let mut u = match start {
        Some(s) => feasible.projected(s),
        None => feasible.center(),
    };
    let mut grad = vec![0.0; n];
    let mut value = obj.value_grad(&u, &mut grad);
    if !value.is_finite() {
        return Err(SolveError::NonFinite { at: u });
    }
    let active_tol = 1e-12;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iters {
        iterations = it;
        let pg = projected_gradient_norm(&u, &grad, feasible);
        if pg <= opts.grad_tol {
            converged = true;
            iterations = it - 1;
            break;
        }

        let mut direction = None;
        if opts.use_newton {
            if let Some(h) = obj.hessian(&u) {
                let active = active_mask_at(&u, &grad, feasible, active_tol);
                direction = newton_direction(&h, &grad, &active);
            }
        }
        let newton = direction.is_some();
        let dir = direction.unwrap_or_else(|| grad.iter().map(|g| -g).collect());

        // Near stationarity the objective differences drown in rounding, so
        // Armijo cannot certify decrease; accept the pure Newton step there
        // (safe under convexity, quadratic local convergence).
        let pure_newton_phase = newton && pg <= 1e-6;

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..60 {
            let mut cand: Vec<f64> = u.iter().zip(&dir).map(|(ui, di)| ui + t * di).collect();
            feasible.project(&mut cand);
            let f_cand = obj.value(&cand);
            if !f_cand.is_finite() {
                t *= opts.armijo_shrink;
                continue;
            }
            let decrease: f64 = grad
                .iter()
                .zip(cand.iter().zip(&u))
                .map(|(g, (c, ui))| g * (c - ui))
                .sum();
            if f_cand <= value + opts.armijo_c * decrease || (pure_newton_phase && t == 1.0) {
                accepted = Some(cand);
                break;
            }
            t *= opts.armijo_shrink;
        }
        let Some(next) = accepted else {
            // step collapsed to rounding level; report current iterate
            break;
        };
        u = next;
        value = obj.value_grad(&u, &mut grad);
        if !value.is_finite() {
            return Err(SolveError::NonFinite { at: u });
        }
    }

    if !converged {
        let pg = projected_gradient_norm(&u, &grad, feasible);
        converged = pg <= opts.grad_tol;
    }

    Ok(SolveResult {
        value,
        minimizer: u,
        iterations,
        converged,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Minimizes a parameterized-convex LSE-family net over `u` at fixed `x`:
/// one convex optimization.
pub fn solve_pcm(
    net: &PlseNet,
    x: &[f64],
    u_box: &BoxSet,
    opts: &SolverOpts,
) -> Result<SolveResult, SolveError> {
    let fixed = net.materialize(x);
    minimize_smooth(&fixed, u_box, opts, None)
}

/// Difference-of-convex outer loop: linearize the concave part at the
/// current iterate, fold the linearization into the convex part's affine
/// offsets, and solve the resulting convex subproblem. The objective trace
/// is non-increasing; the result is a stationary point, not necessarily
/// the global minimum.
pub fn solve_dca(
    net: &DlseNet,
    x: &[f64],
    u_box: &BoxSet,
    opts: &SolverOpts,
) -> Result<SolveResult, SolveError> {
    solve_dca_traced(net, x, u_box, opts).map(|(r, _)| r)
}

/// [`solve_dca`] plus the objective value after each outer iteration.
pub fn solve_dca_traced(
    net: &DlseNet,
    x: &[f64],
    u_box: &BoxSet,
    opts: &SolverOpts,
) -> Result<(SolveResult, Vec<f64>), SolveError> {
    let t0 = Instant::now();
    let sliced = net.slice_at(x);
    let mut u = u_box.center();
    let mut value = sliced.eval(&u);
    if !value.is_finite() {
        return Err(SolveError::NonFinite { at: u });
    }
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let (_, g_neg) = sliced.neg.eval_with_grad(&u);
        // T log sum exp((<a_i,u>+b_i)/T) - <g,u> folds exactly into slopes a_i - g
        let surrogate = LseNet::new(
            sliced
                .pos
                .terms
                .iter()
                .map(|t| {
                    AffineTerm::new(
                        t.a.iter().zip(&g_neg).map(|(a, g)| a - g).collect(),
                        t.b,
                    )
                })
                .collect(),
            sliced.pos.temperature,
        )
        .expect("valid by construction");
        let inner = minimize_smooth(&surrogate, u_box, opts, Some(&u))?;
        let u_next = inner.minimizer;
        let v_next = sliced.eval(&u_next);
        if !v_next.is_finite() {
            return Err(SolveError::NonFinite { at: u_next });
        }
        let moved = u
            .iter()
            .zip(&u_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if v_next > value {
            // descent exhausted to rounding; keep the previous iterate
            converged = true;
            break;
        }
        let improved = value - v_next;
        u = u_next;
        value = v_next;
        trace.push(value);
        if improved < opts.grad_tol || moved < opts.grad_tol {
            converged = true;
            break;
        }
    }
    Ok((
        SolveResult {
            minimizer: u,
            value,
            iterations,
            converged,
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
        trace,
    ))
}

/// Halton low-discrepancy point in `[0,1)^dim` (1-indexed).
fn halton_point(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(dim <= PRIMES.len(), "halton supports up to 8 dims");
    (0..dim)
        .map(|d| {
            let base = PRIMES[d];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// Best of `multistart_count` local solves from deterministic stratified
/// starts (box center plus a Halton sequence). For non-convex nets this is
/// the baseline global heuristic.
pub fn solve_multistart(
    net: &Fnn,
    x: &[f64],
    u_box: &BoxSet,
    opts: &SolverOpts,
) -> Result<SolveResult, SolveError> {
    assert!(opts.multistart_count >= 1);
    let t0 = Instant::now();
    let obj = FnnOverU { net, x };
    let mut best: Option<SolveResult> = None;
    let mut iterations = 0;
    for k in 0..opts.multistart_count {
        let start = if k == 0 {
            u_box.center()
        } else {
            halton_point(k, u_box.dim())
                .iter()
                .zip(u_box.lower().iter().zip(u_box.upper()))
                .map(|(h, (lo, hi))| lo + h * (hi - lo))
                .collect()
        };
        let run = minimize_smooth(&obj, u_box, opts, Some(&start))?;
        iterations += run.iterations;
        let better = match &best {
            None => true,
            Some(b) => {
                (run.converged && !b.converged)
                    || (run.converged == b.converged && run.value < b.value)
            }
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = iterations;
    best.wall_seconds = t0.elapsed().as_secs_f64();
    Ok(best)
}

/// Exhaustive minimum over the regular grid including both endpoints.
/// Ties break toward the lexicographically first grid index.
pub fn brute_force_grid(
    mut f: impl FnMut(&[f64]) -> f64,
    feasible: &BoxSet,
    points_per_dim: usize,
) -> Result<SolveResult, SolveError> {
    assert!(points_per_dim >= 2, "need at least the two endpoints");
    const LIMIT: u64 = 200_000_000;
    let t0 = Instant::now();
    let dim = feasible.dim();
    let total = (points_per_dim as u64)
        .checked_pow(dim as u32)
        .filter(|&t| t <= LIMIT)
        .ok_or(SolveError::GridTooLarge {
            requested: points_per_dim,
            dim,
            limit: LIMIT,
        })?;

    let coord = |d: usize, i: usize| -> f64 {
        let lo = feasible.lower()[d];
        let hi = feasible.upper()[d];
        lo + (hi - lo) * (i as f64) / ((points_per_dim - 1) as f64)
    };

    let mut index = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut best_value = f64::INFINITY;
    let mut best_point = vec![0.0; dim];
    for _ in 0..total {
        for d in 0..dim {
            point[d] = coord(d, index[d]);
        }
        let v = f(&point);
        if !v.is_finite() {
            return Err(SolveError::NonFinite { at: point });
        }
        if v < best_value {
            best_value = v;
            best_point.copy_from_slice(&point);
        }
        // odometer increment
        for d in (0..dim).rev() {
            index[d] += 1;
            if index[d] < points_per_dim {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(SolveResult {
        minimizer: best_point,
        value: best_value,
        iterations: total as usize,
        converged: true,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}
