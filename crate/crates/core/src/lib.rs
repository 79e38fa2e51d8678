//! Supervised low-dimensional embeddings from random-forest proximities,
//! extended to unseen unlabeled points through geometry-regularized
//! autoencoders.
//!
//! The pipeline: fit a forest on labeled training data, derive pairwise
//! proximities from terminal-node co-occupancy weighted by bootstrap
//! multiplicity, diffuse them into a reference embedding, then train an
//! autoencoder whose bottleneck is pinned to that embedding. New points
//! are embedded by a single encoder pass over their features or extended
//! proximity rows - no labels required.

pub mod ae;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod forest;
pub mod linalg;
pub mod proximity;

pub use ae::{AEModel, TrainConfig, Variant};
pub use data::{Dataset, Scaler, SplitSpec};
pub use embed::{DiffusionConfig, Embedding, TimeSelect};
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams};
pub use proximity::{ProximityMatrix, PrototypeSet, SelfSimilarityMode};
