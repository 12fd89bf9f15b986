//! Test-split evaluation: minimizer and minimum-value errors against a
//! ground-truth oracle, plus the objective-value variant used when the true
//! minimizer is out of reach.

use super::train::TrainedModel;
use crate::solve::{BoxSet, SolverOpts};

/// Mean errors of a model's predicted minimizers over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean l2 distance to the nearest true minimizer.
    pub mean_minimizer_err: f64,
    /// Mean absolute difference between the model's minimum value and the
    /// true minimum value.
    pub mean_minvalue_err: f64,
    pub mean_solve_seconds: f64,
    /// Samples dropped because the solver failed or did not converge.
    pub excluded_samples: usize,
}

/// Ground truth for one parameter value: the set of global minimizers (the
/// set matters when the minimizer is not unique) and the minimum value.
#[derive(Debug, Clone, PartialEq)]
pub struct MinOracle {
    pub minimizers: Vec<Vec<f64>>,
    pub value: f64,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Evaluates minimizer/minimum-value errors over the given parameter values.
/// `oracle` supplies the true minimizer set and minimum per `x`; distance is
/// taken to the nearest true minimizer.
pub fn evaluate_metrics(
    model: &TrainedModel,
    xs: &[Vec<f64>],
    u_box: &BoxSet,
    opts: &SolverOpts,
    oracle: impl Fn(&[f64]) -> MinOracle,
) -> Metrics {
    let mut sum_min_err = 0.0;
    let mut sum_val_err = 0.0;
    let mut sum_secs = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    for x in xs {
        let solved = match model.predict_minimizer(x, u_box, opts) {
            Ok(r) if r.converged => r,
            _ => {
                excluded += 1;
                continue;
            }
        };
        let truth = oracle(x);
        let nearest = truth
            .minimizers
            .iter()
            .map(|t| l2(&solved.minimizer, t))
            .fold(f64::INFINITY, f64::min);
        sum_min_err += nearest;
        sum_val_err += (solved.value - truth.value).abs();
        sum_secs += solved.wall_seconds;
        included += 1;
    }
    let denom = included.max(1) as f64;
    Metrics {
        mean_minimizer_err: sum_min_err / denom,
        mean_minvalue_err: sum_val_err / denom,
        mean_solve_seconds: sum_secs / denom,
        excluded_samples: excluded,
    }
}

/// Mean of the true objective evaluated at the model's predicted minimizer,
/// for problems whose true minimum has no tractable oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveMetrics {
    pub mean_objective: f64,
    pub mean_solve_seconds: f64,
    pub excluded_samples: usize,
}

pub fn evaluate_objective_metrics(
    model: &TrainedModel,
    xs: &[Vec<f64>],
    u_box: &BoxSet,
    opts: &SolverOpts,
    objective: impl Fn(&[f64], &[f64]) -> f64,
) -> ObjectiveMetrics {
    let mut sum_obj = 0.0;
    let mut sum_secs = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    for x in xs {
        let solved = match model.predict_minimizer(x, u_box, opts) {
            Ok(r) if r.converged => r,
            _ => {
                excluded += 1;
                continue;
            }
        };
        sum_obj += objective(x, &solved.minimizer);
        sum_secs += solved.wall_seconds;
        included += 1;
    }
    let denom = included.max(1) as f64;
    ObjectiveMetrics {
        mean_objective: sum_obj / denom,
        mean_solve_seconds: sum_secs / denom,
        excluded_samples: excluded,
    }
}
