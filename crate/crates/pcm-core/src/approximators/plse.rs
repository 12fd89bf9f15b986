//! Parameterized log-sum-exp networks: log-sum-exp in the optimization
//! variable `u` whose slopes and offsets are produced by subnetworks of the
//! parameter `x`. Convex in `u` for every fixed `x` by construction.
//!
//! The "plus" variant structurally removes the first slope subnetwork (its
//! slope is identically zero), which in practice makes the minimization
//! strictly convex with a unique minimizer; no parameters exist for that
//! slope, so no gradient step can reintroduce it.

use super::fnn::{Activation, Fnn, FnnCache};
use super::{AffineTerm, LseNet, NetError};
use crate::numerics::{dot, lse_and_weights};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct PlseNet {
    /// Slope subnetworks `x -> R^m`. For plus-constrained nets the vector
    /// holds terms `1..I` (term 0 has no slope); otherwise terms `0..I`.
    a_subnets: Vec<Fnn>,
    /// Offset subnetworks `x -> R`, one per term.
    b_subnets: Vec<Fnn>,
    pub temperature: f64,
    plus_constrained: bool,
}

/// Subnetwork forward passes at one `x`, reused by the solver, the value
/// gradient, and the implicit minimizer gradient.
#[derive(Debug, Clone)]
pub struct PlseCache {
    a_caches: Vec<FnnCache>,
    b_caches: Vec<FnnCache>,
    /// Slope per term; the constrained slot holds zeros.
    pub slopes: Vec<Vec<f64>>,
    /// Offset per term.
    pub offsets: Vec<f64>,
}

impl PlseCache {
    /// Affine term values `<a_i(x), u> + b_i(x)`.
    pub fn term_values(&self, u: &[f64]) -> Vec<f64> {
        self.slopes
            .iter()
            .zip(&self.offsets)
            .map(|(a, &b)| dot(a, u) + b)
            .collect()
    }
}

impl PlseNet {
    pub fn new(
        a_subnets: Vec<Fnn>,
        b_subnets: Vec<Fnn>,
        temperature: f64,
        plus_constrained: bool,
    ) -> Result<Self, NetError> {
        if b_subnets.is_empty() {
            return Err(NetError::InvalidConfig("need at least one term".into()));
        }
        if !(temperature > 0.0) {
            return Err(NetError::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let expected_a = b_subnets.len() - usize::from(plus_constrained);
        if a_subnets.len() != expected_a {
            return Err(NetError::InvalidConfig(format!(
                "expected {expected_a} slope subnets, got {}",
                a_subnets.len()
            )));
        }
        if plus_constrained && a_subnets.is_empty() {
            return Err(NetError::InvalidConfig(
                "plus-constrained net needs at least two terms".into(),
            ));
        }
        let x_dim = b_subnets[0].input_dim();
        if b_subnets
            .iter()
            .any(|n| n.input_dim() != x_dim || n.output_dim() != 1)
        {
            return Err(NetError::InvalidConfig(
                "offset subnets must map x to a scalar".into(),
            ));
        }
        let u_dim = a_subnets
            .first()
            .map(|n| n.output_dim())
            .ok_or_else(|| NetError::InvalidConfig("no slope subnets".into()))?;
        if a_subnets
            .iter()
            .any(|n| n.input_dim() != x_dim || n.output_dim() != u_dim)
        {
            return Err(NetError::InvalidConfig(
                "slope subnets must map x to R^u_dim".into(),
            ));
        }
        Ok(PlseNet {
            a_subnets,
            b_subnets,
            temperature,
            plus_constrained,
        })
    }

    pub fn init(
        x_dim: usize,
        u_dim: usize,
        terms: usize,
        temperature: f64,
        hidden: &[usize],
        plus_constrained: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        if terms == 0 || x_dim == 0 || u_dim == 0 {
            return Err(NetError::InvalidConfig(
                "terms and dims must be >= 1".into(),
            ));
        }
        if plus_constrained && terms < 2 {
            return Err(NetError::InvalidConfig(
                "plus-constrained net needs at least two terms".into(),
            ));
        }
        if !(temperature > 0.0) {
            return Err(NetError::InvalidConfig("temperature must be > 0".into()));
        }
        let mut a_dims = vec![x_dim];
        a_dims.extend_from_slice(hidden);
        a_dims.push(u_dim);
        let mut b_dims = vec![x_dim];
        b_dims.extend_from_slice(hidden);
        b_dims.push(1);
        let n_slopes = terms - usize::from(plus_constrained);
        let a_subnets = (0..n_slopes)
            .map(|_| Fnn::init(&a_dims, Activation::Tanh, rng))
            .collect();
        let b_subnets = (0..terms)
            .map(|_| Fnn::init(&b_dims, Activation::Tanh, rng))
            .collect();
        PlseNet::new(a_subnets, b_subnets, temperature, plus_constrained)
    }

    /// Net whose subnetworks ignore `x` and output fixed constants, i.e. a
    /// plain log-sum-exp network wearing the parameterized interface.
    pub fn constant(
        x_dim: usize,
        slopes: &[Vec<f64>],
        offsets: &[f64],
        temperature: f64,
    ) -> Result<Self, NetError> {
        Self::constant_impl(x_dim, slopes, offsets, temperature, false)
    }

    /// As [`PlseNet::constant`] but plus-constrained: `slopes` covers terms
    /// `1..I` and term 0 carries the structural zero slope.
    pub fn constant_plus(
        x_dim: usize,
        slopes: &[Vec<f64>],
        offsets: &[f64],
        temperature: f64,
    ) -> Result<Self, NetError> {
        Self::constant_impl(x_dim, slopes, offsets, temperature, true)
    }

    fn constant_impl(
        x_dim: usize,
        slopes: &[Vec<f64>],
        offsets: &[f64],
        temperature: f64,
        plus_constrained: bool,
    ) -> Result<Self, NetError> {
        let u_dim = slopes
            .first()
            .map(Vec::len)
            .ok_or_else(|| NetError::InvalidConfig("need at least one slope".into()))?;
        let a_subnets = slopes
            .iter()
            .map(|s| {
                let mut n = Fnn::zeros(&[x_dim, u_dim], Activation::Tanh);
                n.layers[0].bias.copy_from_slice(s);
                n
            })
            .collect();
        let b_subnets = offsets
            .iter()
            .map(|&b| {
                let mut n = Fnn::zeros(&[x_dim, 1], Activation::Tanh);
                n.layers[0].bias[0] = b;
                n
            })
            .collect();
        PlseNet::new(a_subnets, b_subnets, temperature, plus_constrained)
    }

    pub fn x_dim(&self) -> usize {
        self.b_subnets[0].input_dim()
    }

    pub fn u_dim(&self) -> usize {
        self.a_subnets[0].output_dim()
    }

    pub fn term_count(&self) -> usize {
        self.b_subnets.len()
    }

    pub fn plus_constrained(&self) -> bool {
        self.plus_constrained
    }

    /// Slope subnetwork of term `i`; `None` for the structurally
    /// zero-slope term of a plus-constrained net.
    pub fn slope_subnet(&self, i: usize) -> Option<&Fnn> {
        if self.plus_constrained {
            if i == 0 {
                None
            } else {
                Some(&self.a_subnets[i - 1])
            }
        } else {
            Some(&self.a_subnets[i])
        }
    }

    pub fn offset_subnet(&self, i: usize) -> &Fnn {
        &self.b_subnets[i]
    }

    pub fn slope_subnets(&self) -> &[Fnn] {
        &self.a_subnets
    }

    pub fn offset_subnets(&self) -> &[Fnn] {
        &self.b_subnets
    }

    pub(crate) fn slope_subnets_mut(&mut self) -> &mut [Fnn] {
        &mut self.a_subnets
    }

    pub(crate) fn offset_subnets_mut(&mut self) -> &mut [Fnn] {
        &mut self.b_subnets
    }

    /// Runs every subnetwork at `x` and caches the forward passes.
    pub fn forward_cached(&self, x: &[f64]) -> PlseCache {
        let a_caches: Vec<FnnCache> = self.a_subnets.iter().map(|n| n.forward_cached(x)).collect();
        let b_caches: Vec<FnnCache> = self.b_subnets.iter().map(|n| n.forward_cached(x)).collect();
        let mut slopes = Vec::with_capacity(self.term_count());
        if self.plus_constrained {
            slopes.push(vec![0.0; self.u_dim()]);
        }
        slopes.extend(a_caches.iter().map(|c| c.output().to_vec()));
        let offsets = b_caches.iter().map(|c| c.output()[0]).collect();
        PlseCache {
            a_caches,
            b_caches,
            slopes,
            offsets,
        }
    }

    /// Fixes `x`, yielding the plain log-sum-exp network in `u`.
    pub fn materialize(&self, x: &[f64]) -> LseNet {
        let cache = self.forward_cached(x);
        let terms = cache
            .slopes
            .into_iter()
            .zip(cache.offsets)
            .map(|(a, b)| AffineTerm::new(a, b))
            .collect();
        LseNet::new(terms, self.temperature).expect("valid by construction")
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let cache = self.forward_cached(x);
        lse_and_weights(&cache.term_values(u), self.temperature).0
    }

    /// Value and gradient in `u` from a prebuilt cache.
    pub fn eval_from_cache(&self, cache: &PlseCache, u: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (value, weights) = lse_and_weights(&cache.term_values(u), self.temperature);
        let mut grad = vec![0.0; u.len()];
        for (a, &w) in cache.slopes.iter().zip(&weights) {
            for (g, &ai) in grad.iter_mut().zip(a) {
                *g += w * ai;
            }
        }
        (value, grad, weights)
    }

    pub fn eval_with_grad_u(&self, x: &[f64], u: &[f64]) -> (f64, Vec<f64>) {
        let cache = self.forward_cached(x);
        let (v, g, _) = self.eval_from_cache(&cache, u);
        (v, g)
    }

    pub fn param_count(&self) -> usize {
        self.a_subnets
            .iter()
            .chain(&self.b_subnets)
            .map(Fnn::param_count)
            .sum()
    }

    /// Declaration order: slope subnets in storage order, then offset subnets.
    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        for n in self.a_subnets.iter().chain(&self.b_subnets) {
            n.copy_params_to(out);
        }
    }

    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for n in self.a_subnets.iter_mut().chain(&mut self.b_subnets) {
            at += n.set_params_from(&src[at..]);
        }
        at
    }

    /// Backpropagates arbitrary upstream gradients on the per-term slope and
    /// offset outputs into the flat parameter gradient. `slope_upstreams[0]`
    /// is ignored for plus-constrained nets.
    pub fn terms_backprop(
        &self,
        cache: &PlseCache,
        slope_upstreams: &[Vec<f64>],
        offset_upstreams: &[f64],
        grad_acc: &mut [f64],
    ) {
        assert_eq!(slope_upstreams.len(), self.term_count());
        assert_eq!(offset_upstreams.len(), self.term_count());
        assert_eq!(grad_acc.len(), self.param_count(), "grad buffer mismatch");
        let skip = usize::from(self.plus_constrained);
        let mut at = 0;
        for (k, net) in self.a_subnets.iter().enumerate() {
            let n = net.param_count();
            net.backprop(
                &cache.a_caches[k],
                &slope_upstreams[k + skip],
                Some(&mut grad_acc[at..at + n]),
            );
            at += n;
        }
        for (k, net) in self.b_subnets.iter().enumerate() {
            let n = net.param_count();
            net.backprop(
                &cache.b_caches[k],
                &[offset_upstreams[k]],
                Some(&mut grad_acc[at..at + n]),
            );
            at += n;
        }
    }

    /// Accumulates `upstream * d value(x, u) / d params` into `grad_acc`:
    /// the value routes into term `i` with weight `p_i`, giving slope
    /// upstream `p_i u` and offset upstream `p_i`.
    pub fn value_backprop(
        &self,
        cache: &PlseCache,
        u: &[f64],
        upstream: f64,
        grad_acc: &mut [f64],
    ) {
        let (_, weights) = lse_and_weights(&cache.term_values(u), self.temperature);
        let slope_ups: Vec<Vec<f64>> = weights
            .iter()
            .map(|&p| u.iter().map(|&ui| upstream * p * ui).collect())
            .collect();
        let offset_ups: Vec<f64> = weights.iter().map(|&p| upstream * p).collect();
        self.terms_backprop(cache, &slope_ups, &offset_ups, grad_acc);
    }
}
