//! Fully connected layers with manually propagated gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(&self, x: &mut Array2<f64>) {
        if let Activation::Relu = self {
            x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        }
    }
}

/// One affine layer; weights are `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Layer {
    /// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(fan_in: usize, fan_out: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
            rng.random::<f64>() * 2.0 * bound - bound
        });
        Layer { w, b: Array1::zeros(fan_out), act }
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.w);
        out += &self.b;
        self.act.apply(&mut out);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrad {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

/// Gradient of one layer given its input, its output, and the loss
/// gradient at the output; returns the loss gradient at the input.
pub fn layer_backward(
    layer: &Layer,
    input: ArrayView2<f64>,
    output: ArrayView2<f64>,
    grad_out: &Array2<f64>,
) -> (LayerGrad, Array2<f64>) {
    let pre_grad = match layer.act {
        Activation::Linear => grad_out.clone(),
        // ReLU output is positive exactly where its pre-activation is.
        Activation::Relu => {
            let mut g = grad_out.clone();
            g.zip_mut_with(&output, |gv, &ov| {
                if ov <= 0.0 {
                    *gv = 0.0;
                }
            });
            g
        }
    };
    let dw = input.t().dot(&pre_grad);
    let db = pre_grad.sum_axis(Axis(0));
    let grad_in = pre_grad.dot(&layer.w.t());
    (LayerGrad { dw, db }, grad_in)
}

/// A stack of layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Build from a width sequence: ReLU between hidden layers, linear output.
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act =
                    if i + 2 == widths.len() { Activation::Linear } else { Activation::Relu };
                Layer::init(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().expect("non-empty").w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").w.ncols()
    }

    /// Forward pass keeping every activation; index 0 is the input.
    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap().view());
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut current = input.to_owned();
        for layer in &self.layers {
            current = layer.forward(current.view());
        }
        current
    }

    /// Backpropagate through every layer; returns per-layer gradients and
    /// the loss gradient with respect to the stack input.
    pub fn backward(&self, acts: &[Array2<f64>], grad_out: Array2<f64>) -> (Vec<LayerGrad>, Array2<f64>) {
        let mut grads = vec![LayerGrad::default(); self.layers.len()];
        let mut grad = grad_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (g, prev) = layer_backward(layer, acts[l].view(), acts[l + 1].view(), &grad);
            grads[l] = g;
            grad = prev;
        }
        (grads, grad)
    }
}

/// Mean of squared entrywise differences.
pub fn mse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let count = (a.nrows() * a.ncols()) as f64;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc / count
}

/// Gradient of [`mse`] with respect to its first argument, scaled by `weight`.
pub fn mse_grad(a: ArrayView2<f64>, b: ArrayView2<f64>, weight: f64) -> Array2<f64> {
    let count = (a.nrows() * a.ncols()) as f64;
    let mut out = a.to_owned();
    out.zip_mut_with(&b, |x, &y| *x = weight * 2.0 * (*x - y) / count);
    out
}
