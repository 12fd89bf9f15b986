//! The minorant-plus-gap objective approximator and its training pipeline.
//!
//! The model is `f(x,u) = pcm(x,u) + max(0, g(x,u) - g(x, u*(x)))` where
//! `pcm` is a plus-constrained parameterized LSE (convex in `u`) and `g` is
//! a plain scalar net. The gap term is nonnegative and vanishes at the
//! minorant's minimizer `u*(x)`, so minimizing the convex minorant also
//! minimizes the full model: one convex solve retrieves the global
//! minimizer of an otherwise non-convex approximator.

mod metrics;
mod train;

pub use metrics::{
    evaluate_metrics, evaluate_objective_metrics, Metrics, MinOracle, ObjectiveMetrics,
};
pub(crate) use train::accumulate_sample_grad;
pub use train::{
    train_supervised, Dataset, EpochLoss, ModelKind, Sample, SolveCache, TrainConfig, TrainError,
    TrainedModel,
};

use crate::approximators::{Activation, Fnn, NetError, PlseNet};
use crate::solve::{solve_pcm, BoxSet, SolveError, SolveResult, SolverOpts};
use rand::Rng;

/// Convex minorant plus nonnegative gap, with the feasible set and solver
/// options baked in so evaluation is self-contained.
#[derive(Debug, Clone)]
pub struct EplseModel {
    /// The parameterized convex minorant (plus-constrained).
    pub pcm: PlseNet,
    /// Gap network over the stacked input `(x, u)`.
    pub gap: Fnn,
    pub u_box: BoxSet,
    pub solver_opts: SolverOpts,
}

pub(crate) fn stack_xu(x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + u.len());
    z.extend_from_slice(x);
    z.extend_from_slice(u);
    z
}

impl EplseModel {
    pub fn new(
        pcm: PlseNet,
        gap: Fnn,
        u_box: BoxSet,
        solver_opts: SolverOpts,
    ) -> Result<Self, NetError> {
        if !pcm.plus_constrained() {
            return Err(NetError::InvalidConfig(
                "the minorant must be plus-constrained".into(),
            ));
        }
        if gap.input_dim() != pcm.x_dim() + pcm.u_dim() || gap.output_dim() != 1 {
            return Err(NetError::InvalidConfig(
                "gap net must map (x, u) to a scalar".into(),
            ));
        }
        if u_box.dim() != pcm.u_dim() {
            return Err(NetError::InvalidConfig("box/minorant dim mismatch".into()));
        }
        Ok(EplseModel {
            pcm,
            gap,
            u_box,
            solver_opts,
        })
    }

    /// Initialization anchored at the box center; see
    /// [`EplseModel::init_anchored`].
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        x_dim: usize,
        u_dim: usize,
        terms: usize,
        temperature: f64,
        subnet_hidden: &[usize],
        gap_hidden: &[usize],
        u_box: BoxSet,
        solver_opts: SolverOpts,
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        let anchor = Sample {
            x: vec![0.0; x_dim],
            u: u_box.center(),
            value: 0.0,
        };
        Self::init_anchored(
            x_dim,
            u_dim,
            terms,
            temperature,
            subnet_hidden,
            gap_hidden,
            u_box,
            solver_opts,
            &anchor,
            &[],
            rng,
        )
    }

    /// Random initialization shaped so training starts inside the regime
    /// it must end in. With training samples supplied:
    ///
    /// 1. the minorant becomes a vee anchored at `anchor.u` (the `u` of
    ///    the smallest training target), strong enough to survive the
    ///    log-sum-exp smoothing, so its minimizer starts where its pocket
    ///    has to end up;
    /// 2. its offset subnets are ridge-fit to the de-veed targets, an
    ///    estimate of the per-parameter minimum sheet, and a uniform
    ///    offset shift pins the pocket's value at the anchor to
    ///    `anchor.value`;
    /// 3. the gap net is ridge-fit to the residual `f - minorant`, so the
    ///    model starts close to the data and the gate `g(x,u) - g(x,u*)`
    ///    opens wherever the residual is positive, argmin aligned with
    ///    the pocket.
    ///
    /// All fits are closed-form regressions on the nets' random hidden
    /// features; nothing is trained iteratively. Without samples the
    /// minorant keeps its random offsets and the gap falls back to a
    /// shallow bowl around the anchor.
    #[allow(clippy::too_many_arguments)]
    pub fn init_anchored(
        x_dim: usize,
        u_dim: usize,
        terms: usize,
        temperature: f64,
        subnet_hidden: &[usize],
        gap_hidden: &[usize],
        u_box: BoxSet,
        solver_opts: SolverOpts,
        anchor: &Sample,
        samples: &[Sample],
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        assert_eq!(anchor.u.len(), u_dim, "anchor dimension mismatch");
        assert_eq!(anchor.x.len(), x_dim, "anchor dimension mismatch");
        let mut pcm = PlseNet::init(x_dim, u_dim, terms, temperature, subnet_hidden, true, rng)?;
        let vee = vee_init(&mut pcm, &u_box, &anchor.u);
        let mut gap_dims = vec![x_dim + u_dim];
        gap_dims.extend_from_slice(gap_hidden);
        gap_dims.push(1);
        let mut gap = Fnn::init(&gap_dims, Activation::Tanh, rng);

        if samples.is_empty() || gap.layers.len() < 2 {
            bowl_init(&mut gap, x_dim, u_dim, &u_box, &anchor.u);
            return EplseModel::new(pcm, gap, u_box, solver_opts);
        }

        // the ridge fits regress on the nets' random hidden features; at
        // the training-oriented 1/sqrt(fan_in) scale the first-layer tanh
        // units are near-linear and span almost nothing, so spread them
        // into their kinked regime first
        spread_first_layer(&mut gap, 2.5);
        for sub in pcm.offset_subnets_mut() {
            spread_first_layer(sub, 2.5);
        }

        // offset subnets track the de-veed targets: with the vee height
        // removed, the per-x mean of the targets estimates the minimum
        // sheet up to a constant, which the level shift below removes
        let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let sheet: Vec<f64> = samples
            .iter()
            .map(|s| s.value - vee.height(&s.u))
            .collect();
        for sub in pcm.offset_subnets_mut() {
            ridge_fit_head(sub, &xs, &sheet);
        }
        // the head refit wiped the arms' anchoring constants; restore them
        for &(term, constant) in &vee.arm_offsets {
            pcm.offset_subnets_mut()[term]
                .layers
                .last_mut()
                .expect("nonempty")
                .bias[0] += constant;
        }
        let delta = anchor.value - pcm.eval(&anchor.x, &anchor.u);
        for sub in pcm.offset_subnets_mut() {
            sub.layers.last_mut().expect("nonempty").bias[0] += delta;
        }

        // gap fits the remaining residual, so the initial model is already
        // close to the data wherever the gate is open
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| stack_xu(&s.x, &s.u)).collect();
        let residuals: Vec<f64> = samples
            .iter()
            .map(|s| s.value - pcm.eval(&s.x, &s.u))
            .collect();
        ridge_fit_head(&mut gap, &inputs, &residuals);

        // lift the minorant so the model starts at-or-above the data
        // everywhere: under a single-signed residual field the optimizer
        // descends every level together and the carved shapes survive;
        // systematic under-estimation instead drives sign-coherent steps
        // that shred them within an epoch
        let model = EplseModel::new(pcm, gap, u_box, solver_opts)?;
        let mut lift = 0.0f64;
        {
            let mut solves = crate::pcm::train::SolveCache::default();
            for s in samples {
                let value = model
                    .eval_with_minimizer(&s.x, &s.u, &solves.get_or_solve(&model, &s.x)?)
                    ;
                lift = lift.max(s.value - value);
            }
        }
        let mut model = model;
        for sub in model.pcm.offset_subnets_mut() {
            sub.layers.last_mut().expect("nonempty").bias[0] += lift;
        }
        Ok(model)
    }

    pub fn x_dim(&self) -> usize {
        self.pcm.x_dim()
    }

    pub fn u_dim(&self) -> usize {
        self.pcm.u_dim()
    }

    /// Minimizes the convex minorant: the model's global minimizer.
    pub fn predict_minimizer(&self, x: &[f64]) -> Result<SolveResult, SolveError> {
        solve_pcm(&self.pcm, x, &self.u_box, &self.solver_opts)
    }

    /// Full model value; runs (and returns) the convex solve for `u*(x)`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<(f64, SolveResult), SolveError> {
        let star = self.predict_minimizer(x)?;
        let v = self.eval_with_minimizer(x, u, &star);
        Ok((v, star))
    }

    /// Model value reusing a previously computed minimizer for this `x`.
    pub fn eval_with_minimizer(&self, x: &[f64], u: &[f64], star: &SolveResult) -> f64 {
        self.pcm.eval(x, u) + self.gap_value(x, u, star)
    }

    /// The nonnegative gap `max(0, g(x,u) - g(x,u*))`.
    pub fn gap_value(&self, x: &[f64], u: &[f64], star: &SolveResult) -> f64 {
        let g_u = self.gap.eval_scalar(&stack_xu(x, u));
        let g_star = self.gap.eval_scalar(&stack_xu(x, &star.minimizer));
        (g_u - g_star).max(0.0)
    }

    /// Total parameter count; the minorant's parameters come first.
    pub fn param_count(&self) -> usize {
        self.pcm.param_count() + self.gap.param_count()
    }

    pub fn minorant_param_count(&self) -> usize {
        self.pcm.param_count()
    }

    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        self.pcm.copy_params_to(out);
        self.gap.copy_params_to(out);
    }

    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        let a = self.pcm.set_params_from(src);
        a + self.gap.set_params_from(&src[a..])
    }
}

/// The idealized max-affine shape carved by [`vee_init`]: an L-infinity
/// cone over `u` with its pocket at the anchor.
struct VeeShape {
    anchor: Vec<f64>,
    /// Slope per coordinate (box-normalized).
    slopes: Vec<f64>,
    /// Anchoring constant per arm term, re-applied after any offset-head
    /// refit: `(term index, offset)`.
    arm_offsets: Vec<(usize, f64)>,
}

impl VeeShape {
    fn height(&self, u: &[f64]) -> f64 {
        self.anchor
            .iter()
            .zip(u)
            .zip(&self.slopes)
            .map(|((a, v), s)| s * (v - a).abs())
            .fold(0.0, f64::max)
    }
}

/// Shapes a freshly initialized minorant into a vee with its pocket at
/// `anchor`: the leading slope subnets form box-normalized `+e_j` / `-e_j`
/// pairs strong enough to survive the log-sum-exp smoothing, and the
/// remaining slope heads are scaled far down. The minorant's minimizer
/// then starts at the anchor, where the gap's gate pivots.
fn vee_init(pcm: &mut PlseNet, u_box: &BoxSet, anchor: &[f64]) -> VeeShape {
    const PAIR_SLOPE: f64 = 2.0;
    let u_dim = pcm.u_dim();
    let scale_head = |scale: f64| {
        move |sub: &mut Fnn| {
            let head = sub.layers.last_mut().expect("nonempty");
            for w in head.weights.iter_mut().chain(head.bias.iter_mut()) {
                *w *= scale;
            }
        }
    };
    pcm.slope_subnets_mut().iter_mut().for_each(scale_head(0.03));
    pcm.offset_subnets_mut().iter_mut().for_each(scale_head(0.1));
    let mut shape = VeeShape {
        anchor: anchor.to_vec(),
        slopes: Vec::with_capacity(u_dim),
        arm_offsets: Vec::with_capacity(2 * u_dim),
    };
    // slope subnet k carries term k+1; pair terms per coordinate
    for j in 0..u_dim {
        let center = anchor[j];
        let half = 0.5 * (u_box.upper()[j] - u_box.lower()[j]).max(1e-12);
        let slope = PAIR_SLOPE / half;
        shape.slopes.push(slope);
        for (pair, sign) in [(2 * j, 1.0), (2 * j + 1, -1.0)] {
            let Some(sub) = pcm.slope_subnets_mut().get_mut(pair) else {
                return shape;
            };
            let head = sub.layers.last_mut().expect("nonempty");
            head.bias[j] += sign * slope;
            let term = pair + 1;
            let constant = -sign * center * slope;
            shape.arm_offsets.push((term, constant));
            let off_head = pcm.offset_subnets_mut()[term]
                .layers
                .last_mut()
                .expect("nonempty");
            off_head.bias[0] += constant;
        }
    }
    shape
}

/// Rescales a net's first layer from the 1/sqrt(fan_in) draw to the given
/// uniform scale, diversifying the tanh kink positions across the input box.
fn spread_first_layer(net: &mut Fnn, scale: f64) {
    let layer = &mut net.layers[0];
    let factor = scale * (layer.input_dim as f64).sqrt();
    for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
        *w *= factor;
    }
}

/// Sets a scalar-output net's head to the closed-form ridge regression of
/// `targets` on the net's (random) last hidden features. One deterministic
/// linear solve; the hidden layers stay at their random initialization.
fn ridge_fit_head(net: &mut Fnn, inputs: &[Vec<f64>], targets: &[f64]) {
    debug_assert_eq!(inputs.len(), targets.len());
    let n_hidden = net.layers.last().expect("nonempty").input_dim;
    let k = n_hidden + 1; // plus bias
    let mut gram = nalgebra::DMatrix::zeros(k, k);
    let mut moment = nalgebra::DVector::zeros(k);
    let mut feat = vec![0.0; k];
    for (input, &y) in inputs.iter().zip(targets) {
        let cache = net.forward_cached(input);
        let hidden = cache.hidden_output(net.layers.len() - 2);
        feat[..n_hidden].copy_from_slice(hidden);
        feat[n_hidden] = 1.0;
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] += feat[i] * feat[j];
            }
            moment[i] += feat[i] * y;
        }
    }
    let ridge = 1e-4 * inputs.len() as f64;
    for d in 0..k {
        gram[(d, d)] += ridge;
    }
    let solution = nalgebra::Cholesky::new(gram)
        .map(|c| c.solve(&moment))
        .unwrap_or_else(|| nalgebra::DVector::zeros(k));
    let head = net.layers.last_mut().expect("nonempty");
    head.weights
        .copy_from_slice(solution.as_slice().split_at(n_hidden).0);
    head.bias[0] = solution[n_hidden];
}

/// Reshapes a freshly initialized gap net into a shallow bowl over `u`
/// with its minimum at `anchor`, plus a small random remainder.
///
/// The gate `g(x,u) - g(x,u*(x))` only passes gradient where it is
/// positive. [`vee_init`] puts the minorant's initial minimizer at the
/// anchor, so a bowl with its minimum there opens the gate over the whole
/// box, and a region deactivates only once its residual is actually fit.
/// With a generically initialized gap the gate opens with O(1) dead zones
/// that never receive gradient, and training stalls well short of the
/// sup-error the architecture supports.
fn bowl_init(gap: &mut Fnn, x_dim: usize, u_dim: usize, u_box: &BoxSet, anchor: &[f64]) {
    let head = gap.layers.last_mut().expect("nonempty");
    for w in head.weights.iter_mut().chain(head.bias.iter_mut()) {
        *w *= 1e-2;
    }
    let hidden_wide_enough = gap
        .layers
        .iter()
        .take(gap.layers.len() - 1)
        .all(|l| l.output_dim >= 2 * u_dim);
    if gap.layers.len() < 2 || !hidden_wide_enough {
        return; // too narrow to carve the bowl; keep the scaled-down head
    }
    // layer 1: per u-coordinate j, a pair tanh(+s_j - 1), tanh(-s_j - 1)
    // with s_j the anchor-relative box-normalized coordinate; their sum is
    // a bowl in u_j
    let first = &mut gap.layers[0];
    for j in 0..u_dim {
        let center = anchor[j];
        let half = 0.5 * (u_box.upper()[j] - u_box.lower()[j]).max(1e-12);
        for (slot, sign) in [(2 * j, 1.0), (2 * j + 1, -1.0)] {
            let row = &mut first.weights[slot * first.input_dim..(slot + 1) * first.input_dim];
            row.fill(0.0);
            row[x_dim + j] = sign / half;
            first.bias[slot] = -1.0 - sign * center / half;
        }
    }
    // middle layers: one carrier unit per coordinate passes the pair sum
    // through; tanh is monotone, so the bowl shape survives
    for l in 1..gap.layers.len() - 1 {
        let layer = &mut gap.layers[l];
        for j in 0..u_dim {
            let row = &mut layer.weights[j * layer.input_dim..(j + 1) * layer.input_dim];
            row.fill(0.0);
            if l == 1 {
                row[2 * j] = 1.0;
                row[2 * j + 1] = 1.0;
            } else {
                row[j] = 1.0;
            }
            layer.bias[j] = 0.0;
        }
    }
    let single_hidden = gap.layers.len() == 2;
    let head = gap.layers.last_mut().expect("nonempty");
    for j in 0..u_dim {
        if single_hidden {
            head.weights[2 * j] = 4.0;
            head.weights[2 * j + 1] = 4.0;
        } else {
            head.weights[j] = 4.0;
        }
    }
}

/// Result of checking the suboptimality bound `f(x, u*(x)) <= 2*eps + min f`
/// on a product grid, where `eps` is the measured sup-error of the model.
#[derive(Debug, Clone)]
pub struct SuboptReport {
    /// `max |model - f|` over the whole grid.
    pub eps_hat: f64,
    /// `max over x of f(x, u*(x)) - (2 eps_hat + min_u f(x, u))`;
    /// nonpositive means the bound holds everywhere.
    pub worst_violation: f64,
    pub x_count: usize,
    pub u_count: usize,
}

impl SuboptReport {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.worst_violation <= tolerance
    }
}

/// Measures the model's sup-error against `f_true` on `xs x us` and checks
/// that the minorant's minimizer is `2*eps`-suboptimal for the true
/// objective at every grid `x`.
pub fn suboptimality_bound_check(
    model: &EplseModel,
    f_true: impl Fn(&[f64], &[f64]) -> f64,
    xs: &[Vec<f64>],
    us: &[Vec<f64>],
) -> Result<SuboptReport, SolveError> {
    let mut eps_hat = 0.0f64;
    let mut per_x = Vec::with_capacity(xs.len());
    for x in xs {
        let star = model.predict_minimizer(x)?;
        let mut fmin = f64::INFINITY;
        for u in us {
            let truth = f_true(x, u);
            let approx = model.eval_with_minimizer(x, u, &star);
            eps_hat = eps_hat.max((approx - truth).abs());
            fmin = fmin.min(truth);
        }
        per_x.push((f_true(x, &star.minimizer), fmin));
    }
    let worst_violation = per_x
        .iter()
        .map(|(f_at_star, fmin)| f_at_star - (2.0 * eps_hat + fmin))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SuboptReport {
        eps_hat,
        worst_violation,
        x_count: xs.len(),
        u_count: us.len(),
    })
}
