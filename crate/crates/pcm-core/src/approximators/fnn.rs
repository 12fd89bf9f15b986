//! Fully connected networks with a hand-derived reverse pass. Hidden layers
//! share one activation; the output layer is linear.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value (tanh) or the
    /// pre-activation sign (relu, zero at the kink).
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer; weights are row-major `(output_dim x input_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Layer {
    fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Layer {
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            input_dim,
            output_dim,
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.input_dim);
        out.clear();
        for r in 0..self.output_dim {
            let row = &self.weights[r * self.input_dim..(r + 1) * self.input_dim];
            out.push(crate::numerics::dot(row, input) + self.bias[r]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fnn {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Intermediate values of one forward pass, consumed by [`Fnn::backprop`].
#[derive(Debug, Clone)]
pub struct FnnCache {
    input: Vec<f64>,
    /// Pre-activation per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation per hidden layer (the last entry is the linear output).
    post: Vec<Vec<f64>>,
}

impl FnnCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("cache from a nonempty net")
    }

    /// Post-activation values of the given layer (0-based).
    pub fn hidden_output(&self, layer: usize) -> &[f64] {
        &self.post[layer]
    }
}

impl Fnn {
    /// Zero-initialized network with the given layer sizes
    /// (`dims = [input, hidden.., output]`). Panics on fewer than two dims
    /// or a zero dimension.
    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let layers = dims
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Fnn { layers, activation }
    }

    /// Random initialization, uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut net = Fnn::zeros(dims, activation);
        for layer in &mut net.layers {
            let s = 1.0 / (layer.input_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-s..=s);
            }
            for b in &mut layer.bias {
                *b = rng.gen_range(-s..=s);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.input_dim).collect();
        d.push(self.output_dim());
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in declaration order: per layer, weights row-major then bias.
    pub fn copy_params_to(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`Fnn::copy_params_to`]; returns the number of values read.
    pub fn set_params_from(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        at
    }

    /// Plain forward pass. Panics on input dimension mismatch.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i < last {
                for z in &mut next {
                    *z = self.activation.apply(*z);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Scalar convenience for nets with a one-dimensional codomain.
    pub fn eval_scalar(&self, input: &[f64]) -> f64 {
        debug_assert_eq!(self.output_dim(), 1);
        self.eval(input)[0]
    }

    /// Forward pass that records everything the reverse pass needs.
    pub fn forward_cached(&self, input: &[f64]) -> FnnCache {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&cur, &mut z);
            pre.push(z.clone());
            if i < last {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            post.push(z.clone());
            cur = z;
        }
        FnnCache {
            input: input.to_vec(),
            pre,
            post,
        }
    }

    /// Reverse pass. `upstream` is the loss gradient at the output; returns
    /// the gradient with respect to the input and, when `grad_acc` is given,
    /// accumulates (+=) parameter gradients in declaration order.
    pub fn backprop(
        &self,
        cache: &FnnCache,
        upstream: &[f64],
        mut grad_acc: Option<&mut [f64]>,
    ) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim(), "upstream dim mismatch");
        if let Some(acc) = grad_acc.as_deref() {
            assert_eq!(acc.len(), self.param_count(), "grad buffer size mismatch");
        }

        // Per-layer offsets into the flat parameter layout.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.len() + l.bias.len();
        }

        let mut delta = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let layer_input: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.post[li - 1]
            };
            if let Some(acc) = grad_acc.as_deref_mut() {
                let base = offsets[li];
                for r in 0..layer.output_dim {
                    let d = delta[r];
                    let wrow = &mut acc[base + r * layer.input_dim..base + (r + 1) * layer.input_dim];
                    for (w, x) in wrow.iter_mut().zip(layer_input) {
                        *w += d * x;
                    }
                }
                let brow = &mut acc[base + layer.weights.len()..base + layer.weights.len() + layer.output_dim];
                for (b, d) in brow.iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            // Propagate through the weights, then through the previous
            // layer's activation (the input layer has none).
            let mut prev = vec![0.0; layer.input_dim];
            for r in 0..layer.output_dim {
                let d = delta[r];
                let row = &layer.weights[r * layer.input_dim..(r + 1) * layer.input_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if li > 0 {
                for (c, p) in prev.iter_mut().enumerate() {
                    *p *= self
                        .activation
                        .derivative(cache.pre[li - 1][c], cache.post[li - 1][c]);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Jacobian of the output with respect to the input, row per output.
    pub fn input_jacobian(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let cache = self.forward_cached(input);
        let m = self.output_dim();
        let mut rows = Vec::with_capacity(m);
        for r in 0..m {
            let mut e = vec![0.0; m];
            e[r] = 1.0;
            rows.push(self.backprop(&cache, &e, None));
        }
        rows
    }

    /// Gradient of a scalar-output net with respect to its input.
    pub fn input_grad(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.output_dim(), 1);
        let cache = self.forward_cached(input);
        self.backprop(&cache, &[1.0], None)
    }
}
