//! Minimal dense feed-forward network with swish hidden activations,
//! manual backprop, and flat parameter access for the optimizer and
//! checkpoints. Gradients reuse the `Mlp` container (same shapes).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx swish(x) = s(x) * (1 + x * (1 - s(x))).
pub fn swish_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// One dense layer: `w` is (out, in), `b` is (out).
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Hidden layers use swish; the output layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Forward intermediates for a batch: inputs, pre-activations, and
/// activations per layer, each (batch, dim).
pub struct BatchCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut ChaCha8Rng) -> Mlp {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-limit..limit)
                });
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Same shapes as `self`, all parameters zero. Used for gradients.
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    /// Multiplies the final layer's parameters, shrinking initial
    /// outputs toward zero.
    pub fn scale_final(&mut self, s: f64) {
        let last = self.layers.last_mut().expect("nonempty net");
        last.w *= s;
        last.b *= s;
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("nonempty net").w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty net").w.nrows()
    }

    /// Layer shapes as (out, in) pairs, for checkpoint validation.
    pub fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.w.nrows(), l.w.ncols())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Single-sample forward pass without caching, for rollouts.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut a = Array1::from(x.to_vec());
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&a) + &layer.b;
            if i + 1 < n {
                z.mapv_inplace(swish);
            }
            a = z;
        }
        a.to_vec()
    }

    /// Batched forward pass; `x` is (batch, input).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_batch_cached(x).0
    }

    pub fn forward_batch_cached(&self, x: &Array2<f64>) -> (Array2<f64>, BatchCache) {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension");
        let mut cache = BatchCache {
            input: x.clone(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let n = self.layers.len();
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w.t()) + &layer.b;
            cache.pre.push(z.clone());
            let out = if i + 1 < n { z.mapv(swish) } else { z };
            cache.post.push(out.clone());
            a = out;
        }
        (a, cache)
    }

    /// Backpropagates `grad_out` (batch, output) through the cached
    /// forward pass, accumulating parameter gradients (summed over the
    /// batch) into `grads`.
    pub fn backward_batch(&self, cache: &BatchCache, grad_out: &Array2<f64>, grads: &mut Mlp) {
        let n = self.layers.len();
        assert_eq!(grads.layers.len(), n, "gradient container shape");
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                // Through the swish applied after layer i.
                let dz = cache.pre[i].mapv(swish_deriv);
                g = &g * &dz;
            }
            let a_prev = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            grads.layers[i].w = &grads.layers[i].w + &g.t().dot(a_prev);
            grads.layers[i].b = &grads.layers[i].b + &g.sum_axis(Axis(0));
            if i > 0 {
                g = g.dot(&self.layers[i].w);
            }
        }
    }

    /// Writes all parameters into `out` in a fixed order (per layer:
    /// row-major weights, then biases). Returns the count written.
    pub fn write_flat(&self, out: &mut [f64]) -> usize {
        let mut k = 0;
        for l in &self.layers {
            for v in l.w.iter() {
                out[k] = *v;
                k += 1;
            }
            for v in l.b.iter() {
                out[k] = *v;
                k += 1;
            }
        }
        k
    }

    /// Reads parameters written by `write_flat`. Returns the count read.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = src[k];
                k += 1;
            }
            for v in l.b.iter_mut() {
                *v = src[k];
                k += 1;
            }
        }
        k
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        self.write_flat(&mut out);
        out
    }
}
