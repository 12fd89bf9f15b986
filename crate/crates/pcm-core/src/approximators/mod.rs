//! Objective-function approximators: plain feed-forward nets, the convex
//! max-affine / log-sum-exp family, their parameterized variants with
//! x-dependent coefficients, and differences of log-sum-exp networks.
//!
//! Every analytic gradient here is hand-derived and checked against central
//! finite differences in the test suites.

mod fnn;
mod plse;

pub use fnn::{Activation, Fnn, FnnCache, Layer};
pub use plse::{PlseCache, PlseNet};

use crate::numerics::{dot, lse_and_weights, RngSeed};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
}

/// One affine piece `<a, z> + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTerm {
    pub a: Vec<f64>,
    pub b: f64,
}

impl AffineTerm {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        AffineTerm { a, b }
    }

    fn value(&self, z: &[f64]) -> f64 {
        dot(&self.a, z) + self.b
    }
}

/// Max-affine network: pointwise maximum of affine pieces. Convex.
#[derive(Debug, Clone, PartialEq)]
pub struct MaNet {
    pub terms: Vec<AffineTerm>,
}

impl MaNet {
    pub fn new(terms: Vec<AffineTerm>) -> Result<Self, NetError> {
        if terms.is_empty() {
            return Err(NetError::InvalidConfig("need at least one term".into()));
        }
        let dim = terms[0].a.len();
        if terms.iter().any(|t| t.a.len() != dim) {
            return Err(NetError::InvalidConfig("inconsistent term dims".into()));
        }
        Ok(MaNet { terms })
    }

    pub fn input_dim(&self) -> usize {
        self.terms[0].a.len()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.input_dim(), "input dimension mismatch");
        self.terms
            .iter()
            .map(|t| t.value(z))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Log-sum-exp network: the temperature-smoothed max-affine network.
/// Convex and smooth, with value within `T ln I` above the max-affine one.
#[derive(Debug, Clone, PartialEq)]
pub struct LseNet {
    pub terms: Vec<AffineTerm>,
    pub temperature: f64,
}

impl LseNet {
    pub fn new(terms: Vec<AffineTerm>, temperature: f64) -> Result<Self, NetError> {
        if terms.is_empty() {
            return Err(NetError::InvalidConfig("need at least one term".into()));
        }
        if !(temperature > 0.0) {
            return Err(NetError::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let dim = terms[0].a.len();
        if terms.iter().any(|t| t.a.len() != dim) {
            return Err(NetError::InvalidConfig("inconsistent term dims".into()));
        }
        Ok(LseNet { terms, temperature })
    }

    /// Random terms with the same `1/sqrt(fan_in)` scheme used for dense layers.
    pub fn init(input_dim: usize, terms: usize, temperature: f64, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (input_dim as f64).sqrt();
        let terms = (0..terms)
            .map(|_| {
                AffineTerm::new(
                    (0..input_dim).map(|_| rng.gen_range(-s..=s)).collect(),
                    rng.gen_range(-s..=s),
                )
            })
            .collect();
        LseNet::new(terms, temperature).expect("valid by construction")
    }

    pub fn input_dim(&self) -> usize {
        self.terms[0].a.len()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    fn term_values(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.input_dim(), "input dimension mismatch");
        self.terms.iter().map(|t| t.value(z)).collect()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        lse_and_weights(&self.term_values(z), self.temperature).0
    }

    /// Value, gradient `sum_i p_i a_i`, and the softmax weights themselves.
    pub fn eval_full(&self, z: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (value, weights) = lse_and_weights(&self.term_values(z), self.temperature);
        let mut grad = vec![0.0; z.len()];
        for (t, &w) in self.terms.iter().zip(&weights) {
            for (g, &ai) in grad.iter_mut().zip(&t.a) {
                *g += w * ai;
            }
        }
        (value, grad, weights)
    }

    pub fn eval_with_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let (v, g, _) = self.eval_full(z);
        (v, g)
    }

    /// Analytic Hessian `(1/T) (sum_i p_i a_i a_i^T - g g^T)`; positive
    /// semidefinite softmax covariance of the slopes.
    pub fn hessian(&self, z: &[f64]) -> nalgebra::DMatrix<f64> {
        let (_, grad, weights) = self.eval_full(z);
        let m = z.len();
        let mut h = nalgebra::DMatrix::zeros(m, m);
        for (t, &w) in self.terms.iter().zip(&weights) {
            for i in 0..m {
                for j in 0..m {
                    h[(i, j)] += w * t.a[i] * t.a[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] = (h[(i, j)] - grad[i] * grad[j]) / self.temperature;
            }
        }
        h
    }

    /// Fixes the leading coordinates of `z = (x, u)` and returns the network
    /// in the remaining variables: slopes lose their x-block and offsets
    /// absorb `<a_x, x>`.
    pub fn slice_at(&self, x: &[f64]) -> LseNet {
        let nx = x.len();
        assert!(nx <= self.input_dim(), "slice longer than input");
        let terms = self
            .terms
            .iter()
            .map(|t| AffineTerm::new(t.a[nx..].to_vec(), t.b + dot(&t.a[..nx], x)))
            .collect();
        LseNet {
            terms,
            temperature: self.temperature,
        }
    }

    pub fn param_count(&self) -> usize {
        self.terms.len() * (self.input_dim() + 1)
    }

    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        for t in &self.terms {
            out.extend_from_slice(&t.a);
            out.push(t.b);
        }
    }

    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for t in &mut self.terms {
            let na = t.a.len();
            t.a.copy_from_slice(&src[at..at + na]);
            at += na;
            t.b = src[at];
            at += 1;
        }
        at
    }

    /// Accumulates `upstream * d value / d params` into `grad_acc`
    /// (declaration order: per term, slope then offset).
    pub fn accumulate_param_grad(&self, z: &[f64], upstream: f64, grad_acc: &mut [f64]) {
        assert_eq!(grad_acc.len(), self.param_count(), "grad buffer mismatch");
        let (_, weights) = lse_and_weights(&self.term_values(z), self.temperature);
        let mut at = 0;
        for &w in &weights {
            let s = upstream * w;
            for &zi in z {
                grad_acc[at] += s * zi;
                at += 1;
            }
            grad_acc[at] += s;
            at += 1;
        }
    }
}

/// Difference of two log-sum-exp networks sharing one temperature;
/// expressive but only locally minimizable (via DCA).
#[derive(Debug, Clone, PartialEq)]
pub struct DlseNet {
    pub pos: LseNet,
    pub neg: LseNet,
}

impl DlseNet {
    pub fn new(pos: LseNet, neg: LseNet) -> Result<Self, NetError> {
        if pos.temperature != neg.temperature {
            return Err(NetError::InvalidConfig(
                "both halves must share one temperature".into(),
            ));
        }
        if pos.input_dim() != neg.input_dim() {
            return Err(NetError::InvalidConfig("input dims differ".into()));
        }
        Ok(DlseNet { pos, neg })
    }

    pub fn init(
        input_dim: usize,
        terms: usize,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let pos = LseNet::init(input_dim, terms, temperature, rng);
        let neg = LseNet::init(input_dim, terms, temperature, rng);
        DlseNet::new(pos, neg).expect("valid by construction")
    }

    pub fn input_dim(&self) -> usize {
        self.pos.input_dim()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.pos.eval(z) - self.neg.eval(z)
    }

    pub fn eval_with_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let (vp, gp) = self.pos.eval_with_grad(z);
        let (vn, gn) = self.neg.eval_with_grad(z);
        let grad = gp.iter().zip(&gn).map(|(p, n)| p - n).collect();
        (vp - vn, grad)
    }

    pub fn slice_at(&self, x: &[f64]) -> DlseNet {
        DlseNet {
            pos: self.pos.slice_at(x),
            neg: self.neg.slice_at(x),
        }
    }

    pub fn param_count(&self) -> usize {
        self.pos.param_count() + self.neg.param_count()
    }

    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        self.pos.copy_params_to(out);
        self.neg.copy_params_to(out);
    }

    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        let a = self.pos.set_params_from(src);
        a + self.neg.set_params_from(&src[a..])
    }

    pub fn accumulate_param_grad(&self, z: &[f64], upstream: f64, grad_acc: &mut [f64]) {
        let split = self.pos.param_count();
        self.pos
            .accumulate_param_grad(z, upstream, &mut grad_acc[..split]);
        self.neg
            .accumulate_param_grad(z, -upstream, &mut grad_acc[split..]);
    }
}

/// Shape configuration for [`init_network`].
#[derive(Debug, Clone)]
pub enum NetSpec {
    Fnn {
        dims: Vec<usize>,
        activation: Activation,
    },
    Ma {
        input_dim: usize,
        terms: usize,
    },
    Lse {
        input_dim: usize,
        terms: usize,
        temperature: f64,
    },
    Plse {
        x_dim: usize,
        u_dim: usize,
        terms: usize,
        temperature: f64,
        hidden: Vec<usize>,
        plus_constrained: bool,
    },
    Dlse {
        input_dim: usize,
        terms: usize,
        temperature: f64,
    },
}

/// Tagged union over the network families.
#[derive(Debug, Clone)]
pub enum Approximator {
    Fnn(Fnn),
    Ma(MaNet),
    Lse(LseNet),
    Plse(PlseNet),
    Dlse(DlseNet),
}

/// Builds a randomly initialized network; deterministic in the seed.
pub fn init_network(spec: &NetSpec, seed: RngSeed) -> Result<Approximator, NetError> {
    let mut rng = crate::numerics::named_stream(seed, "net-init");
    match spec {
        NetSpec::Fnn { dims, activation } => {
            if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
                return Err(NetError::InvalidConfig(format!("bad layer dims {dims:?}")));
            }
            Ok(Approximator::Fnn(Fnn::init(dims, *activation, &mut rng)))
        }
        NetSpec::Ma { input_dim, terms } => {
            if *terms == 0 || *input_dim == 0 {
                return Err(NetError::InvalidConfig("terms and dim must be >= 1".into()));
            }
            let lse = LseNet::init(*input_dim, *terms, 1.0, &mut rng);
            Ok(Approximator::Ma(MaNet { terms: lse.terms }))
        }
        NetSpec::Lse {
            input_dim,
            terms,
            temperature,
        } => {
            if *terms == 0 || *input_dim == 0 {
                return Err(NetError::InvalidConfig("terms and dim must be >= 1".into()));
            }
            if !(*temperature > 0.0) {
                return Err(NetError::InvalidConfig("temperature must be > 0".into()));
            }
            Ok(Approximator::Lse(LseNet::init(
                *input_dim,
                *terms,
                *temperature,
                &mut rng,
            )))
        }
        NetSpec::Plse {
            x_dim,
            u_dim,
            terms,
            temperature,
            hidden,
            plus_constrained,
        } => Ok(Approximator::Plse(PlseNet::init(
            *x_dim,
            *u_dim,
            *terms,
            *temperature,
            hidden,
            *plus_constrained,
            &mut rng,
        )?)),
        NetSpec::Dlse {
            input_dim,
            terms,
            temperature,
        } => {
            if *terms == 0 || *input_dim == 0 {
                return Err(NetError::InvalidConfig("terms and dim must be >= 1".into()));
            }
            if !(*temperature > 0.0) {
                return Err(NetError::InvalidConfig("temperature must be > 0".into()));
            }
            Ok(Approximator::Dlse(DlseNet::init(
                *input_dim,
                *terms,
                *temperature,
                &mut rng,
            )))
        }
    }
}

#[cfg(test)]
mod tests;
