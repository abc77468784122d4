//! Weighted triplet-loss metric learning for person re-identification.
//!
//! The pipeline mixes labeled samples from several datasets into one gallery,
//! draws identity-balanced mini-batches, samples triplets over a per-batch
//! feature cache, trains a small feed-forward embedding with plain SGD and
//! scores it with cumulative match curves.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the scalar to `f64`, which is what the CLI
//! uses.

pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod gallery;
pub mod loss;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod training;

pub use embedding::{EmbeddingNetwork, ForwardCache, NetworkGradients};
pub use error::{Error, Result};
pub use evaluation::{CmcCurve, CmcResult, EvalProtocol, GridRow};
pub use gallery::{MixedGallery, Sample};
pub use loss::{LossConfig, TripletFeatures};
pub use sampling::{MiniBatch, TripletIndices};
pub use scalar::Scalar;
pub use training::{EpochStats, TrainConfig};

pub type Network = EmbeddingNetwork<f64>;
pub type Network32 = EmbeddingNetwork<f32>;
pub type Gallery = MixedGallery<f64>;
pub type Gallery32 = MixedGallery<f32>;
pub type Loss = LossConfig<f64>;
pub type Train = TrainConfig<f64>;
