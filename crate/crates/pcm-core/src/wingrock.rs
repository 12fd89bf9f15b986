//! Wing-rock roll dynamics, zero-order-hold discretization, the
//! finite-horizon NMPC objective, dataset generation, closed-loop
//! simulation, and a linear-MPC baseline built from the origin
//! linearization plus known equilibrium inputs.
//!
//! Angles are radians throughout this module; degree conversion happens at
//! the CSV/CLI boundary only.

use crate::numerics::{named_stream, RngSeed};
use crate::pcm::{Dataset, Sample, TrainError};
use crate::solve::{minimize_smooth, BoxSet, QuadraticObjective, SolveError, SolverOpts};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("controller returned input {value} outside the box at step {step}")]
    InputOutOfBounds { step: usize, value: f64 },
    #[error("controller returned {got} inputs, expected {expected}")]
    BadInputLength { got: usize, expected: usize },
    #[error("final time {tf} is not a multiple of the step {dt}")]
    BadFinalTime { tf: f64, dt: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Constants of the roll dynamics
/// `phi'' + omega^2 phi = mu1 phi' + b1 phi^3 + mu2 phi^2 phi' + b2 phi phi'^2 + delta_g`.
///
/// The defaults are the slender-delta-wing coefficients (80 deg sweep at
/// 25 deg angle of attack) that circulate in the wing-rock control
/// literature, with `omega^2 = 0.0148927`; the origin is a weakly unstable
/// focus whose growing oscillation is the wing-rock limit cycle. They are
/// configuration values, echoed into every results file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WingRockConsts {
    /// Natural frequency (rad/s).
    pub omega: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for WingRockConsts {
    fn default() -> Self {
        WingRockConsts {
            omega: 0.0148927_f64.sqrt(),
            mu1: 0.0415424,
            mu2: -0.06578382,
            b1: 0.01668756,
            b2: 0.08578836,
        }
    }
}

pub const DEG: f64 = std::f64::consts::PI / 180.0;

/// Finite-horizon setpoint-tracking problem: quadratic stage/terminal costs
/// over the zero-order-hold rollout, inputs box-constrained per step.
#[derive(Debug, Clone, PartialEq)]
pub struct NmpcProblem {
    pub horizon: usize,
    pub dt: f64,
    /// Stage state weight (symmetric PSD).
    pub q: Matrix2<f64>,
    /// Terminal state weight (symmetric PSD).
    pub qn: Matrix2<f64>,
    /// Input weight (positive).
    pub r: f64,
    /// Per-step input interval.
    pub input_lo: f64,
    pub input_hi: f64,
    /// Initial-state sampling box (phi rad, phi-dot rad/s).
    pub x0_box: BoxSet,
    /// Setpoint sampling box; the rate component is pinned to zero.
    pub setpoint_box: BoxSet,
}

impl Default for NmpcProblem {
    fn default() -> Self {
        NmpcProblem {
            horizon: 5,
            dt: 0.1,
            q: Matrix2::new(1.0, 0.0, 0.0, 0.1),
            qn: Matrix2::new(1.0, 0.0, 0.0, 0.1),
            r: 0.1,
            input_lo: -1.75,
            input_hi: 1.75,
            x0_box: BoxSet::new(
                vec![-25.0 * DEG, -50.0 * DEG],
                vec![25.0 * DEG, 50.0 * DEG],
            ),
            setpoint_box: BoxSet::new(vec![-25.0 * DEG, 0.0], vec![25.0 * DEG, 0.0]),
        }
    }
}

impl NmpcProblem {
    /// Box over the stacked input sequence `(u_0 .. u_{N-1})`.
    pub fn input_seq_box(&self) -> BoxSet {
        BoxSet::cube(self.input_lo, self.input_hi, self.horizon)
    }

    /// Box over the stacked parameter `(x0, xd)`.
    pub fn parameter_box(&self) -> BoxSet {
        let mut lo = self.x0_box.lower().to_vec();
        lo.extend_from_slice(self.setpoint_box.lower());
        let mut hi = self.x0_box.upper().to_vec();
        hi.extend_from_slice(self.setpoint_box.upper());
        BoxSet::new(lo, hi)
    }
}

/// Right-hand side of the continuous dynamics in state-space form
/// `(phi, phi-dot)`.
pub fn dynamics_deriv(state: [f64; 2], input: f64, c: &WingRockConsts) -> [f64; 2] {
    let [phi, rate] = state;
    [
        rate,
        -c.omega * c.omega * phi
            + c.mu1 * rate
            + c.b1 * phi.powi(3)
            + c.mu2 * phi * phi * rate
            + c.b2 * phi * rate * rate
            + input,
    ]
}

/// Zero-order-hold step: classical Runge-Kutta with `substeps` stages over
/// `[0, dt]` with the input held constant.
pub fn step_zoh_with_substeps(
    state: [f64; 2],
    input: f64,
    dt: f64,
    c: &WingRockConsts,
    substeps: usize,
) -> Result<[f64; 2], SimError> {
    assert!(dt > 0.0 && substeps > 0);
    let h = dt / substeps as f64;
    let mut s = state;
    for _ in 0..substeps {
        let k1 = dynamics_deriv(s, input, c);
        let k2 = dynamics_deriv(advance(s, k1, 0.5 * h), input, c);
        let k3 = dynamics_deriv(advance(s, k2, 0.5 * h), input, c);
        let k4 = dynamics_deriv(advance(s, k3, h), input, c);
        s = [
            s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState { step: 0 });
    }
    Ok(s)
}

fn advance(s: [f64; 2], k: [f64; 2], h: f64) -> [f64; 2] {
    [s[0] + h * k[0], s[1] + h * k[1]]
}

/// Default-resolution zero-order-hold step (10 substeps).
pub fn step_zoh(
    state: [f64; 2],
    input: f64,
    dt: f64,
    c: &WingRockConsts,
) -> Result<[f64; 2], SimError> {
    step_zoh_with_substeps(state, input, dt, c, 10)
}

fn quad_form(m: &Matrix2<f64>, v: [f64; 2]) -> f64 {
    let x = Vector2::new(v[0], v[1]);
    (x.transpose() * m * x)[(0, 0)]
}

/// Finite-horizon cost of an input sequence: terminal cost plus stage costs
/// `(x_n - x_d)' Q (x_n - x_d) + r u_n^2`, states rolled out with the
/// zero-order-hold model.
pub fn nmpc_objective(
    x0: [f64; 2],
    xd: [f64; 2],
    u_seq: &[f64],
    problem: &NmpcProblem,
    c: &WingRockConsts,
) -> Result<f64, SimError> {
    assert_eq!(u_seq.len(), problem.horizon, "input sequence length");
    let mut state = x0;
    let mut cost = 0.0;
    for &u in u_seq {
        let err = [state[0] - xd[0], state[1] - xd[1]];
        cost += quad_form(&problem.q, err) + problem.r * u * u;
        state = step_zoh(state, u, problem.dt, c)?;
    }
    let err = [state[0] - xd[0], state[1] - xd[1]];
    cost += quad_form(&problem.qn, err);
    Ok(cost)
}

/// The stacked parameter vector `(x0, xd)` seen by the approximators.
pub fn stack_parameter(x0: [f64; 2], xd: [f64; 2]) -> Vec<f64> {
    vec![x0[0], x0[1], xd[0], xd[1]]
}

/// Uniformly sampled `(x, u, J)` triples split per the given fractions.
pub fn generate_nmpc_dataset(
    n: usize,
    problem: &NmpcProblem,
    c: &WingRockConsts,
    seed: RngSeed,
    split: (f64, f64, f64),
) -> Result<Dataset, TrainError> {
    let mut rng = named_stream(seed, "nmpc-dataset");
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = [
            rng.gen_range(problem.x0_box.lower()[0]..=problem.x0_box.upper()[0]),
            rng.gen_range(problem.x0_box.lower()[1]..=problem.x0_box.upper()[1]),
        ];
        let xd = [
            rng.gen_range(problem.setpoint_box.lower()[0]..=problem.setpoint_box.upper()[0]),
            0.0,
        ];
        let u_seq: Vec<f64> = (0..problem.horizon)
            .map(|_| rng.gen_range(problem.input_lo..=problem.input_hi))
            .collect();
        let value = nmpc_objective(x0, xd, &u_seq, problem, c)
            .map_err(|_| TrainError::Solve(SolveError::NonFinite { at: u_seq.clone() }))?;
        samples.push(Sample {
            x: stack_parameter(x0, xd),
            u: u_seq,
            value,
        });
    }
    Dataset::from_samples(samples, split)
}

/// One closed-loop step as produced by a controller.
#[derive(Debug, Clone)]
pub struct ControlStep {
    /// Planned input sequence over the horizon; the first entry is applied.
    pub u_seq: Vec<f64>,
    pub solve_seconds: f64,
}

/// Receding-horizon controller interface: map the current state and the
/// setpoint to a planned input sequence.
pub trait Controller {
    fn control(&self, state: [f64; 2], setpoint: [f64; 2]) -> Result<ControlStep, SolveError>;
}

impl<F> Controller for F
where
    F: Fn([f64; 2], [f64; 2]) -> Result<ControlStep, SolveError>,
{
    fn control(&self, state: [f64; 2], setpoint: [f64; 2]) -> Result<ControlStep, SolveError> {
        self(state, setpoint)
    }
}

/// Closed-loop record: `states` has one more entry than `inputs`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    pub inputs: Vec<f64>,
    pub solve_seconds: Vec<f64>,
}

impl Trajectory {
    pub fn terminal_state(&self) -> [f64; 2] {
        *self.states.last().expect("nonempty trajectory")
    }

    pub fn max_abs_input(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, u| m.max(u.abs()))
    }
}

/// Applies the first input of the controller's plan at every step, checking
/// the input box as a hard constraint.
pub fn closed_loop_sim(
    controller: &dyn Controller,
    x0: [f64; 2],
    xd: [f64; 2],
    tf: f64,
    problem: &NmpcProblem,
    c: &WingRockConsts,
) -> Result<Trajectory, SimError> {
    let steps_f = tf / problem.dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 || steps == 0 {
        return Err(SimError::BadFinalTime { tf, dt: problem.dt });
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut solve_seconds = Vec::with_capacity(steps);
    let mut state = x0;
    states.push(state);
    for step in 0..steps {
        let plan = controller.control(state, xd)?;
        if plan.u_seq.len() != problem.horizon {
            return Err(SimError::BadInputLength {
                got: plan.u_seq.len(),
                expected: problem.horizon,
            });
        }
        let u = plan.u_seq[0];
        if !(problem.input_lo..=problem.input_hi).contains(&u) {
            return Err(SimError::InputOutOfBounds { step, value: u });
        }
        state = step_zoh(state, u, problem.dt, c).map_err(|_| SimError::NonFiniteState { step })?;
        states.push(state);
        inputs.push(u);
        solve_seconds.push(plan.solve_seconds);
    }
    Ok(Trajectory {
        times: (0..=steps).map(|k| k as f64 * problem.dt).collect(),
        states,
        inputs,
        solve_seconds,
    })
}

/// Matrix exponential by scaling-and-squaring on the Taylor series; the
/// matrices here are tiny (3x3) and well scaled.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.amax();
    let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
    let scaled = a / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=16 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Linear MPC built from the origin linearization of the wing-rock model
/// with knowledge of the nonlinear equilibrium inputs: steers with a
/// box-constrained convex quadratic program per step.
pub struct LinearMpc {
    problem: NmpcProblem,
    consts: WingRockConsts,
    a_disc: Matrix2<f64>,
    b_disc: Vector2<f64>,
}

impl LinearMpc {
    pub fn new(problem: NmpcProblem, consts: WingRockConsts) -> Self {
        // exact zero-order-hold discretization of the linearization via the
        // augmented-matrix exponential
        let mut aug = DMatrix::zeros(3, 3);
        aug[(0, 1)] = 1.0;
        aug[(1, 0)] = -consts.omega * consts.omega;
        aug[(1, 1)] = consts.mu1;
        aug[(1, 2)] = 1.0;
        let e = expm(&(aug * problem.dt));
        let a_disc = Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]);
        let b_disc = Vector2::new(e[(0, 2)], e[(1, 2)]);
        LinearMpc {
            problem,
            consts,
            a_disc,
            b_disc,
        }
    }

    /// Input holding the nonlinear plant at rest at roll angle `phi`.
    pub fn equilibrium_input(&self, phi: f64) -> f64 {
        self.consts.omega * self.consts.omega * phi - self.consts.b1 * phi.powi(3)
    }

    /// The horizon cost as an explicit convex quadratic in the stacked
    /// input sequence.
    fn quadratic(&self, x0: [f64; 2], xd: [f64; 2]) -> QuadraticObjective {
        let n = self.problem.horizon;
        let u_eq = self.equilibrium_input(xd[0]);
        // x_k = A^k x0 + sum_{j<k} A^{k-1-j} B u_j, stacked over k = 1..N
        let mut reach = DMatrix::zeros(2 * n, n);
        let mut drift = DVector::zeros(2 * n);
        let mut a_pow = Matrix2::identity();
        let x0v = Vector2::new(x0[0], x0[1]);
        for k in 1..=n {
            a_pow = self.a_disc * a_pow;
            let xk = a_pow * x0v;
            drift[2 * (k - 1)] = xk[0];
            drift[2 * (k - 1) + 1] = xk[1];
            let mut a_j = Matrix2::identity();
            for j in (0..k).rev() {
                // columns accumulate A^{k-1-j} B; iterate j downward so the
                // power grows once per step
                let col = a_j * self.b_disc;
                reach[(2 * (k - 1), j)] = col[0];
                reach[(2 * (k - 1) + 1, j)] = col[1];
                a_j = self.a_disc * a_j;
            }
        }
        // stage weights: Q for k = 1..N-1, QN at k = N (the k = 0 stage
        // cost is constant in u), input deviation weight r around u_eq
        let mut weight = DMatrix::zeros(2 * n, 2 * n);
        for k in 1..=n {
            let w = if k == n { &self.problem.qn } else { &self.problem.q };
            weight[(2 * (k - 1), 2 * (k - 1))] = w[(0, 0)];
            weight[(2 * (k - 1), 2 * (k - 1) + 1)] = w[(0, 1)];
            weight[(2 * (k - 1) + 1, 2 * (k - 1))] = w[(1, 0)];
            weight[(2 * (k - 1) + 1, 2 * (k - 1) + 1)] = w[(1, 1)];
        }
        let mut xd_stack = DVector::zeros(2 * n);
        for k in 0..n {
            xd_stack[2 * k] = xd[0];
            xd_stack[2 * k + 1] = xd[1];
        }
        let err0 = &drift - &xd_stack;
        let mut p = reach.transpose() * &weight * &reach;
        for d in 0..n {
            p[(d, d)] += self.problem.r;
        }
        let mut q = reach.transpose() * &weight * &err0 * 2.0;
        for d in 0..n {
            q[d] -= 2.0 * self.problem.r * u_eq;
        }
        let c = (err0.transpose() * &weight * &err0)[(0, 0)]
            + self.problem.r * u_eq * u_eq * n as f64;
        QuadraticObjective { p, q, c }
    }

    pub fn solve(&self, x0: [f64; 2], xd: [f64; 2]) -> Result<ControlStep, SolveError> {
        let t0 = Instant::now();
        let quad = self.quadratic(x0, xd);
        let opts = SolverOpts::default();
        let result = minimize_smooth(&quad, &self.problem.input_seq_box(), &opts, None)?;
        Ok(ControlStep {
            u_seq: result.minimizer,
            solve_seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Unconstrained minimizer of the same quadratic, for cross-checks.
    pub fn solve_unconstrained(&self, x0: [f64; 2], xd: [f64; 2]) -> DVector<f64> {
        let quad = self.quadratic(x0, xd);
        let chol = nalgebra::Cholesky::new(quad.p.clone()).expect("positive definite");
        chol.solve(&(-&quad.q / 2.0))
    }
}

impl Controller for LinearMpc {
    fn control(&self, state: [f64; 2], setpoint: [f64; 2]) -> Result<ControlStep, SolveError> {
        self.solve(state, setpoint)
    }
}
