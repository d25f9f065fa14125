//! Feed-forward stack over a flat parameter slice, with hand-written backpropagation.
//!
//! Layer `l` stores its weight as an `out × in` row-major block followed by its bias.
//! Hidden layers use SiLU; the output layer is linear.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayout {
    /// `[input, hidden..., output]`
    pub sizes: Vec<usize>,
}

pub struct ForwardCache {
    /// Layer inputs, starting with the network input.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values of the hidden layers.
    pre: Vec<Array2<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

impl MlpLayout {
    pub fn new(sizes: Vec<usize>) -> Self {
        debug_assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        Self { sizes }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weight offset, bias offset, in, out)` per layer.
    pub fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let entry = (off, off + i * o, i, o);
                off += i * o + o;
                entry
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `±1/√fan_in` weights and zero biases; the output layer optionally all zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_output: bool) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        let layers = self.layer_offsets();
        let last = layers.len() - 1;
        for (l, &(w, _, i, o)) in layers.iter().enumerate() {
            if zero_output && l == last {
                continue;
            }
            let bound = 1.0 / (i as f64).sqrt();
            for p in &mut params[w..w + i * o] {
                *p = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn weight<'a>(&self, params: &'a [f64], w: usize, i: usize, o: usize) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((o, i), &params[w..w + i * o]).expect("layer block matches layout")
    }

    fn bias<'a>(&self, params: &'a [f64], b: usize, o: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[b..b + o])
    }

    pub fn forward(&self, params: &[f64], input: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(params, input).0
    }

    pub fn forward_cached(&self, params: &[f64], input: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        let layers = self.layer_offsets();
        let last = layers.len() - 1;
        let mut activations = vec![input.to_owned()];
        let mut pre = Vec::with_capacity(last);
        let mut out = Array2::zeros((0, 0));
        for (l, &(w, b, i, o)) in layers.iter().enumerate() {
            let a = activations.last().unwrap();
            let z = a.dot(&self.weight(params, w, i, o).t()) + self.bias(params, b, o);
            if l == last {
                out = z;
            } else {
                activations.push(z.mapv(silu));
                pre.push(z);
            }
        }
        (out, ForwardCache { activations, pre })
    }

    /// Accumulate parameter gradients into `grads` and return the gradient w.r.t. the input.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_out: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let layers = self.layer_offsets();
        let mut delta = d_out;
        for (l, &(w, b, i, o)) in layers.iter().enumerate().rev() {
            let a = &cache.activations[l];
            let dw = delta.t().dot(a);
            let mut gw = ArrayViewMut2::from_shape((o, i), &mut grads[w..w + i * o]).expect("layer block matches layout");
            gw += &dw;
            let db: Array1<f64> = delta.sum_axis(Axis(0));
            for (g, d) in grads[b..b + o].iter_mut().zip(db.iter()) {
                *g += d;
            }
            let d_in = delta.dot(&self.weight(params, w, i, o));
            delta = if l > 0 {
                let z = &cache.pre[l - 1];
                d_in * &z.mapv(silu_grad)
            } else {
                d_in
            };
        }
        delta
    }
}

/// Copy `src` into the column block starting at `col` of `dst`.
pub fn put_columns(dst: &mut Array2<f64>, col: usize, src: ArrayView2<f64>) {
    dst.slice_mut(s![.., col..col + src.ncols()]).assign(&src);
}
