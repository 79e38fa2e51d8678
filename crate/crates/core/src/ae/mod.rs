//! Geometry-regularized autoencoders and their training loop.

mod model;
mod net;
mod train;

pub use model::{
    build_io, standardize_embedding, AEModel, ForwardPass, Gradients, LossTerms, TrainingMeta,
    Variant, DEFAULT_HIDDEN, MODEL_FORMAT_VERSION,
};
pub use net::{mse, Activation, Layer, LayerGrad, Mlp};
pub use train::{train, EpochStats, OptimizerKind, TrainConfig};
