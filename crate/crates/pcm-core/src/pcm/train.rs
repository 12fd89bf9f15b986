//! Mini-batch supervised training for the four trainable model families,
//! with best-validation checkpointing. Deterministic given the seed: one
//! named RNG stream drives the batch shuffles, and nothing else is random.

use super::EplseModel;
use crate::approximators::{DlseNet, Fnn, PlseNet};
use crate::implicit::{minimizer_vjp_cached, SensitivityMode};
use crate::numerics::{adam_step, named_stream, AdamState, RngSeed};
use crate::solve::{solve_dca, solve_multistart, solve_pcm, BoxSet, SolveError, SolveResult, SolverOpts};
use rand::seq::SliceRandom;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NaNLoss { epoch: usize, step: usize },
    #[error("dataset split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadSplit((f64, f64, f64)),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// One supervised triple: objective value at `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value: f64,
}

/// Samples plus a disjoint train/validation/test index partition.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Sequential split by the given fractions (samples are expected to be
    /// i.i.d. draws already). Sizes are rounded, the test split takes the
    /// remainder, and every split must be nonempty.
    pub fn from_samples(
        samples: Vec<Sample>,
        fractions: (f64, f64, f64),
    ) -> Result<Self, TrainError> {
        let (ft, fv, fe) = fractions;
        if !(ft > 0.0 && fv > 0.0 && fe > 0.0 && (ft + fv + fe - 1.0).abs() < 1e-9) {
            return Err(TrainError::BadSplit(fractions));
        }
        let n = samples.len();
        let n_train = ((n as f64) * ft).round() as usize;
        let n_valid = ((n as f64) * fv).round() as usize;
        if n_train == 0 {
            return Err(TrainError::EmptySplit("train"));
        }
        if n_valid == 0 {
            return Err(TrainError::EmptySplit("valid"));
        }
        if n_train + n_valid >= n {
            return Err(TrainError::EmptySplit("test"));
        }
        Ok(Dataset {
            samples,
            train: (0..n_train).collect(),
            valid: (n_train..n_train + n_valid).collect(),
            test: (n_train + n_valid..n).collect(),
        })
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn valid_indices(&self) -> &[usize] {
        &self.valid
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Fnn,
    Plse,
    Dlse,
    Eplse,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fnn => "fnn",
            ModelKind::Plse => "plse",
            ModelKind::Dlse => "dlse",
            ModelKind::Eplse => "eplse",
        }
    }
}

/// A trainable (or trained) approximator of the objective function.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Fnn(Fnn),
    Plse(PlseNet),
    Dlse(DlseNet),
    Eplse(EplseModel),
}

/// Per-pass cache of convex solves, keyed on the exact bits of `x`.
#[derive(Default)]
pub struct SolveCache {
    map: HashMap<Vec<u64>, SolveResult>,
}

impl SolveCache {
    fn key(x: &[f64]) -> Vec<u64> {
        x.iter().map(|v| v.to_bits()).collect()
    }

    fn get_or_solve(
        &mut self,
        model: &EplseModel,
        x: &[f64],
    ) -> Result<SolveResult, SolveError> {
        if let Some(hit) = self.map.get(&Self::key(x)) {
            return Ok(hit.clone());
        }
        let res = model.predict_minimizer(x)?;
        self.map.insert(Self::key(x), res.clone());
        Ok(res)
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Fnn(_) => ModelKind::Fnn,
            TrainedModel::Plse(_) => ModelKind::Plse,
            TrainedModel::Dlse(_) => ModelKind::Dlse,
            TrainedModel::Eplse(_) => ModelKind::Eplse,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TrainedModel::Fnn(n) => n.param_count(),
            TrainedModel::Plse(n) => n.param_count(),
            TrainedModel::Dlse(n) => n.param_count(),
            TrainedModel::Eplse(m) => m.param_count(),
        }
    }

    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        match self {
            TrainedModel::Fnn(n) => n.copy_params_to(out),
            TrainedModel::Plse(n) => n.copy_params_to(out),
            TrainedModel::Dlse(n) => n.copy_params_to(out),
            TrainedModel::Eplse(m) => m.copy_params_to(out),
        }
    }

    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        match self {
            TrainedModel::Fnn(n) => n.set_params_from(src),
            TrainedModel::Plse(n) => n.set_params_from(src),
            TrainedModel::Dlse(n) => n.set_params_from(src),
            TrainedModel::Eplse(m) => m.set_params_from(src),
        }
    }

    /// Model value at `(x, u)`; the minorant-gap model needs its convex
    /// solve, served through `cache`.
    pub fn value_cached(
        &self,
        x: &[f64],
        u: &[f64],
        cache: &mut SolveCache,
    ) -> Result<f64, SolveError> {
        Ok(match self {
            TrainedModel::Fnn(n) => n.eval_scalar(&super::stack_xu(x, u)),
            TrainedModel::Plse(n) => n.eval(x, u),
            TrainedModel::Dlse(n) => n.eval(&super::stack_xu(x, u)),
            TrainedModel::Eplse(m) => {
                let star = cache.get_or_solve(m, x)?;
                m.eval_with_minimizer(x, u, &star)
            }
        })
    }

    /// Approximate minimizer of the model over `u` for the given `x`:
    /// multistart for the FNN, DCA for the DLSE, one convex solve for the
    /// LSE-family models.
    pub fn predict_minimizer(
        &self,
        x: &[f64],
        u_box: &BoxSet,
        opts: &SolverOpts,
    ) -> Result<SolveResult, SolveError> {
        match self {
            TrainedModel::Fnn(n) => solve_multistart(n, x, u_box, opts),
            TrainedModel::Plse(n) => solve_pcm(n, x, u_box, opts),
            TrainedModel::Dlse(n) => solve_dca(n, x, u_box, opts),
            TrainedModel::Eplse(m) => solve_pcm(&m.pcm, x, u_box, opts),
        }
    }

    /// Mean squared error over the indexed samples.
    pub fn mse_on(&self, dataset: &Dataset, indices: &[usize]) -> Result<f64, SolveError> {
        let mut cache = SolveCache::default();
        let mut total = 0.0;
        for &i in indices {
            let s = &dataset.samples[i];
            let r = self.value_cached(&s.x, &s.u, &mut cache)? - s.value;
            total += r * r;
        }
        Ok(total / indices.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: RngSeed,
    /// train/valid/test fractions; must be positive and sum to 1.
    pub split: (f64, f64, f64),
    /// How gradients flow through the minorant's minimizer (minorant-gap
    /// model only).
    pub sensitivity: SensitivityMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: RngSeed(0),
            split: (0.7, 0.2, 0.1),
            sensitivity: SensitivityMode::Implicit,
        }
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

/// Accumulates `d mean-squared-error / d params` for one sample into
/// `grad`, scaled by `s = 2 * residual / batch_len`, and returns the
/// squared residual.
pub(crate) fn accumulate_sample_grad(
    model: &TrainedModel,
    sample: &Sample,
    batch_len: usize,
    sensitivity: SensitivityMode,
    solves: &mut SolveCache,
    grad: &mut [f64],
) -> Result<f64, SolveError> {
    let x = &sample.x;
    let u = &sample.u;
    match model {
        TrainedModel::Fnn(net) => {
            let z = super::stack_xu(x, u);
            let cache = net.forward_cached(&z);
            let r = cache.output()[0] - sample.value;
            let s = 2.0 * r / batch_len as f64;
            net.backprop(&cache, &[s], Some(grad));
            Ok(r * r)
        }
        TrainedModel::Plse(net) => {
            let cache = net.forward_cached(x);
            let (value, _, _) = net.eval_from_cache(&cache, u);
            let r = value - sample.value;
            let s = 2.0 * r / batch_len as f64;
            net.value_backprop(&cache, u, s, grad);
            Ok(r * r)
        }
        TrainedModel::Dlse(net) => {
            let z = super::stack_xu(x, u);
            let r = net.eval(&z) - sample.value;
            let s = 2.0 * r / batch_len as f64;
            net.accumulate_param_grad(&z, s, grad);
            Ok(r * r)
        }
        TrainedModel::Eplse(m) => {
            let star = solves.get_or_solve(m, x)?;
            let pcm_cache = m.pcm.forward_cached(x);
            let (pcm_value, _, _) = m.pcm.eval_from_cache(&pcm_cache, u);

            let z_u = super::stack_xu(x, u);
            let z_star = super::stack_xu(x, &star.minimizer);
            let gap_cache_u = m.gap.forward_cached(&z_u);
            let gap_cache_star = m.gap.forward_cached(&z_star);
            let g = gap_cache_u.output()[0] - gap_cache_star.output()[0];

            let value = pcm_value + g.max(0.0);
            let r = value - sample.value;
            let s = 2.0 * r / batch_len as f64;

            let n1 = m.pcm.param_count();
            let (grad_pcm, grad_gap) = grad.split_at_mut(n1);

            // direct path through the minorant value
            m.pcm.value_backprop(&pcm_cache, u, s, grad_pcm);

            // gap active: gradient flows into the gap net at both points and
            // into the minorant through the minimizer (subgradient 0 at ties)
            if g > 0.0 {
                m.gap.backprop(&gap_cache_u, &[s], Some(grad_gap));
                m.gap.backprop(&gap_cache_star, &[-s], Some(grad_gap));
                if sensitivity == SensitivityMode::Implicit && star.converged {
                    let dstar = m.gap.backprop(&gap_cache_star, &[1.0], None);
                    let upstream: Vec<f64> = dstar[x.len()..].iter().map(|d| -s * d).collect();
                    minimizer_vjp_cached(
                        &m.pcm,
                        &pcm_cache,
                        &star,
                        &m.u_box,
                        &upstream,
                        SensitivityMode::Implicit,
                        grad_pcm,
                    );
                }
            }
            Ok(r * r)
        }
    }
}

/// Trains `model` on the dataset's training split, tracking validation loss
/// each epoch and returning the parameters of the best-validation epoch
/// together with the full loss history.
pub fn train_supervised(
    mut model: TrainedModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, Vec<EpochLoss>), TrainError> {
    if dataset.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dataset.valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    assert!(cfg.batch_size >= 1, "batch size must be >= 1");
    assert!(cfg.epochs >= 1, "need at least one epoch");

    let n_params = model.param_count();
    let mut theta = Vec::with_capacity(n_params);
    model.copy_params_to(&mut theta);
    let mut adam = AdamState::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut shuffle_rng = named_stream(cfg.seed, "train-shuffle");
    let mut order: Vec<usize> = dataset.train.to_vec();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sq_err = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.fill(0.0);
            let mut solves = SolveCache::default();
            let mut batch_sq_err = 0.0;
            for &i in batch {
                batch_sq_err += accumulate_sample_grad(
                    &model,
                    &dataset.samples[i],
                    batch.len(),
                    cfg.sensitivity,
                    &mut solves,
                    &mut grad,
                )?;
            }
            if !batch_sq_err.is_finite() {
                return Err(TrainError::NaNLoss { epoch, step });
            }
            epoch_sq_err += batch_sq_err;
            adam_step(&mut theta, &grad, &mut adam, cfg.lr);
            model.set_params_from(&theta);
        }

        let train_loss = epoch_sq_err / dataset.train.len() as f64;
        let valid_loss = model.mse_on(dataset, &dataset.valid)?;
        if !valid_loss.is_finite() {
            return Err(TrainError::NaNLoss { epoch, step: usize::MAX });
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            valid_loss,
        });
        let is_best = best.as_ref().map_or(true, |(b, _, _)| valid_loss < *b);
        if is_best {
            best = Some((valid_loss, epoch, theta.clone()));
        }
    }

    let (_, _, best_theta) = best.expect("at least one epoch ran");
    model.set_params_from(&best_theta);
    Ok((model, history))
}
