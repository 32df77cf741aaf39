//! Decision Transformer for decentralized grid path finding.
//!
//! A return-conditioned causal transformer over (return-to-go, observation,
//! action) triples. Observations go through a small convolutional encoder.
//! Forward and backward passes are written out by hand on top of `ndarray`,
//! and the whole model is generic over `f32` and `f64`.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
mod infer;
pub mod layers;
pub mod model;
pub mod params;
pub mod scalar;
pub mod train;

pub use batch::{HistorySlot, TokenBatch};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use config::DTConfig;
pub use error::ModelError;
pub use model::{masked_cross_entropy, Model};
pub use params::{Layout, Params};
pub use scalar::Scalar;
pub use train::{evaluate, StepStats, TrainConfig, TrainState, LOG_HEADER};
