//! Mini-batch training with seeded shuffling.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{AEModel, Gradients};
use super::net::{Layer, LayerGrad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Sgd => write!(f, "sgd"),
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                write!(f, "adam({beta1},{beta2},{epsilon})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Optional multiplicative learning-rate decay applied per epoch.
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam_default(),
            seed: 0,
            lr_decay: None,
        }
    }
}

/// Per-epoch loss terms averaged over the epoch's samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub total: f64,
    pub recon: f64,
    pub geom: f64,
    pub prox: f64,
}

struct LayerState {
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl LayerState {
    fn zeros_like(layer: &Layer) -> Self {
        LayerState {
            mw: Array2::zeros(layer.w.raw_dim()),
            vw: Array2::zeros(layer.w.raw_dim()),
            mb: Array1::zeros(layer.b.raw_dim()),
            vb: Array1::zeros(layer.b.raw_dim()),
        }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    encoder: Vec<LayerState>,
    decoder: Vec<LayerState>,
    head: Option<LayerState>,
    step: u64,
}

impl Optimizer {
    fn new(model: &AEModel, kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            encoder: model.encoder.layers.iter().map(LayerState::zeros_like).collect(),
            decoder: model.decoder.layers.iter().map(LayerState::zeros_like).collect(),
            head: model.prox_head.as_ref().map(LayerState::zeros_like),
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut AEModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        for (i, layer) in model.encoder.layers.iter_mut().enumerate() {
            update_layer(layer, &grads.encoder[i], &mut self.encoder[i], self.kind, lr, self.step);
        }
        for (i, layer) in model.decoder.layers.iter_mut().enumerate() {
            update_layer(layer, &grads.decoder[i], &mut self.decoder[i], self.kind, lr, self.step);
        }
        if let (Some(layer), Some(grad), Some(state)) =
            (model.prox_head.as_mut(), grads.prox_head.as_ref(), self.head.as_mut())
        {
            update_layer(layer, grad, state, self.kind, lr, self.step);
        }
    }
}

fn update_layer(
    layer: &mut Layer,
    grad: &LayerGrad,
    state: &mut LayerState,
    kind: OptimizerKind,
    lr: f64,
    step: u64,
) {
    match kind {
        OptimizerKind::Sgd => {
            layer.w.zip_mut_with(&grad.dw, |p, &g| *p -= lr * g);
            layer.b.zip_mut_with(&grad.db, |p, &g| *p -= lr * g);
        }
        OptimizerKind::Adam { beta1, beta2, epsilon } => {
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - beta2.powi(step as i32);
            adam_tensor(&mut layer.w, &grad.dw, &mut state.mw, &mut state.vw, beta1, beta2, epsilon, lr, bc1, bc2);
            adam_vector(&mut layer.b, &grad.db, &mut state.mb, &mut state.vb, beta1, beta2, epsilon, lr, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_tensor(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
    });
}

#[allow(clippy::too_many_arguments)]
fn adam_vector(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
    });
}

/// Train in place and return the per-epoch loss history.
///
/// Rows of `input`, `target`, `g`, and (when present) `prox_target` must
/// align. Shuffling is seeded, training is single-threaded, and
/// `epochs = 0` returns with the weights untouched.
pub fn train(
    model: &mut AEModel,
    input: ArrayView2<f64>,
    target: ArrayView2<f64>,
    g: ArrayView2<f64>,
    prox_target: Option<ArrayView2<f64>>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let n = input.nrows();
    if target.nrows() != n || g.nrows() != n {
        return Err(Error::invalid("input, target and regularizer row counts differ"));
    }
    if let Some(p) = prox_target {
        if p.nrows() != n {
            return Err(Error::invalid("proximity-target row count differs from input"));
        }
    }
    if g.ncols() != model.bottleneck {
        return Err(Error::DimensionMismatch { expected: model.bottleneck, got: g.ncols() });
    }
    if cfg.batch_size < 1 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if model.prox_head.is_some() && prox_target.is_none() {
        return Err(Error::invalid("variant has a proximity head but no proximity target"));
    }

    let mut optimizer = Optimizer::new(model, cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = match cfg.lr_decay {
            Some(decay) => cfg.learning_rate * decay.powi(epoch as i32),
            None => cfg.learning_rate,
        };
        order.shuffle(&mut rng);
        let mut sums = EpochStats { total: 0.0, recon: 0.0, geom: 0.0, prox: 0.0 };

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = input.select(Axis(0), chunk);
            let batch_target = target.select(Axis(0), chunk);
            let batch_g = g.select(Axis(0), chunk);
            let batch_prox = prox_target.map(|p| p.select(Axis(0), chunk));

            let fwd = model.forward(batch.view())?;
            let terms =
                model.loss_terms(&fwd, batch_target.view(), batch_g.view(), batch_prox.as_ref().map(|p| p.view()))?;
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let grads = model.backward(
                &fwd,
                batch_target.view(),
                batch_g.view(),
                batch_prox.as_ref().map(|p| p.view()),
            );
            optimizer.apply(model, &grads, lr);

            let w = chunk.len() as f64;
            sums.total += terms.total * w;
            sums.recon += terms.recon * w;
            sums.geom += terms.geom * w;
            sums.prox += terms.prox * w;
        }

        let scale = 1.0 / n as f64;
        history.push(EpochStats {
            total: sums.total * scale,
            recon: sums.recon * scale,
            geom: sums.geom * scale,
            prox: sums.prox * scale,
        });
    }
    Ok(history)
}
