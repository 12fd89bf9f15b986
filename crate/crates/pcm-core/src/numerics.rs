//! Shared deterministic numeric kernels: stabilized log-sum-exp, softmax
//! weights, the Adam update, central finite differences, and the seeded
//! RNG stream contract used everywhere randomness is needed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Adam defaults; the usual choices for the cited algorithm.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("input vector is empty")]
    EmptyInput,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
}

/// Root seed for a run. Every random stream is derived from it by name, so
/// one integer pins datasets, initializations, and shuffles independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent, reproducible random stream from a root seed and a
/// label. Identical (seed, label) pairs yield bitwise-identical streams on
/// every platform; distinct labels decouple consumers from each other.
pub fn named_stream(seed: RngSeed, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed.0 ^ fnv1a(label)))
}

/// `T * log(sum_i exp(v_i / T))` with max-shift stabilization.
///
/// The result always lies in `[max(v), max(v) + T*ln(len)]`.
pub fn logsumexp(values: &[f64], temperature: f64) -> Result<f64, NumericsError> {
    check_lse_args(values, temperature)?;
    Ok(lse_and_weights(values, temperature).0)
}

/// Softmax weights `p_i = exp(v_i/T) / sum_j exp(v_j/T)`; the gradient of
/// [`logsumexp`] with respect to the values. Strictly positive, sums to 1.
pub fn softmax_weights(values: &[f64], temperature: f64) -> Result<Vec<f64>, NumericsError> {
    check_lse_args(values, temperature)?;
    Ok(lse_and_weights(values, temperature).1)
}

fn check_lse_args(values: &[f64], temperature: f64) -> Result<(), NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    if !(temperature > 0.0) {
        return Err(NumericsError::NonPositiveTemperature(temperature));
    }
    Ok(())
}

/// Stabilized value and softmax weights in one pass. Caller guarantees a
/// nonempty slice and positive temperature.
pub(crate) fn lse_and_weights(values: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = values
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    (max + temperature * sum.ln(), weights)
}

/// Optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update, in place. Panics on shape mismatch.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "params/grads shape mismatch");
    assert_eq!(params.len(), state.len(), "params/state shape mismatch");
    assert!(lr > 0.0, "learning rate must be positive");
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Central-difference gradient `(f(x+h e_i) - f(x-h e_i)) / 2h`, the test
/// oracle for every analytic gradient in this crate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut work = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error between an analytic and a reference gradient:
/// `||a - r||_2 / max(||a||_2, ||r||_2, floor)`.
pub fn gradient_rel_err(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r) * (a - r))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nr: f64 = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    diff / na.max(nr).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn logsumexp_single_element_is_exact() {
        assert_eq!(logsumexp(&[5.0], 2.0).unwrap(), 5.0);
    }

    #[test]
    fn logsumexp_two_zeros_is_ln2() {
        let v = logsumexp(&[0.0, 0.0], 1.0).unwrap();
        assert!((v - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_large_inputs_do_not_overflow() {
        let v = logsumexp(&[1000.0, 1000.0], 1.0).unwrap();
        assert!(v.is_finite());
        assert!((v - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_rejects_bad_args() {
        assert_eq!(logsumexp(&[], 1.0), Err(NumericsError::EmptyInput));
        assert_eq!(
            logsumexp(&[1.0], 0.0),
            Err(NumericsError::NonPositiveTemperature(0.0))
        );
        assert_eq!(
            softmax_weights(&[1.0], -2.0),
            Err(NumericsError::NonPositiveTemperature(-2.0))
        );
    }

    #[test]
    fn softmax_symmetry() {
        for t in [0.3, 1.0, 7.0] {
            let w = softmax_weights(&[4.2, 4.2, 4.2], t).unwrap();
            for wi in w {
                assert!((wi - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        let w = softmax_weights(&[2.0_f64.ln(), 0.0], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_unstabilized_formula() {
        let mut rng = named_stream(RngSeed(7), "softmax-oracle");
        let vals: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w = softmax_weights(&vals, 1.0).unwrap();
        let raw: Vec<f64> = vals.iter().map(|v| v.exp()).collect();
        let sum: f64 = raw.iter().sum();
        for (wi, ri) in w.iter().zip(&raw) {
            assert!((wi - ri / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut s, 0.1);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.first_moment, vec![0.0; 3]);
        assert_eq!(s.second_moment, vec![0.0; 3]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // bias-corrected m/sqrt(v) collapses to sign(g) on the first step
        let g = 0.37;
        let lr = 1e-2;
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[g], &mut s, lr);
        let expected = -lr * g / (g.abs() + ADAM_EPS);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + lr).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = named_stream(RngSeed(11), "adam-det");
            let mut p: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut s = AdamState::new(8);
            for _ in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
                adam_step(&mut p, &g, &mut s, 1e-2);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_grad(|u| u[0] * u[0], &[3.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_affine_is_exact() {
        let g = finite_diff_grad(|u| 2.5 * u[0] - 7.0 * u[1] + 1.0, &[0.3, -0.8], 1e-5);
        assert!((g[0] - 2.5).abs() < 1e-9);
        assert!((g[1] + 7.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_even_function_at_origin() {
        let g = finite_diff_grad(
            |u| logsumexp(&[u[0], -u[0]], 1.0).unwrap(),
            &[0.0],
            1e-5,
        );
        assert!(g[0].abs() < 1e-8);
    }

    #[test]
    fn softmax_underflows_gracefully_for_extreme_spreads() {
        // beyond exp's representable range the losing weight collapses to
        // +0.0 but normalization still holds
        let w = softmax_weights(&[-1000.0, 1000.0], 0.5).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1], 1.0);
    }

    #[test]
    fn named_streams_are_reproducible_and_distinct() {
        let mut a = named_stream(RngSeed(3), "data");
        let mut b = named_stream(RngSeed(3), "data");
        let mut c = named_stream(RngSeed(3), "init");
        let xa: u64 = a.gen();
        assert_eq!(xa, b.gen::<u64>());
        assert_ne!(xa, c.gen::<u64>());
    }

    proptest! {
        #[test]
        fn lse_envelope_bounds(vals in proptest::collection::vec(-50.0f64..50.0, 1..12),
                               t in 0.05f64..10.0) {
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = logsumexp(&vals, t).unwrap();
            prop_assert!(v >= max);
            prop_assert!(v <= max + t * (vals.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_is_normalized_and_positive(vals in proptest::collection::vec(-30.0f64..30.0, 1..12),
                                              t in 0.1f64..10.0) {
            // spread/t stays far above exp's underflow threshold (~ -745)
            let w = softmax_weights(&vals, t).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn softmax_shift_invariance(vals in proptest::collection::vec(-5.0f64..5.0, 2..8),
                                    shift in -100.0f64..100.0) {
            let w0 = softmax_weights(&vals, 1.0).unwrap();
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let w1 = softmax_weights(&shifted, 1.0).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
