//! Motion-matrix video prediction on the CPU.
//!
//! Given `T` observed frames, the model predicts `T'` future frames by
//! building appearance-agnostic patch-similarity motion matrices, predicting
//! future matrices with a small 3-D conv net, and composing future features
//! as matrix products of past features with chained motion matrices.
//! Everything — the reverse-mode tensor engine, the network blocks, the
//! synthetic data generator, metrics, and the training loop — runs on plain
//! CPU with deterministic seeding.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use model::{MmvpModel, ModelConfig};
pub use tensor::{Element, Graph, Tensor, Var};
pub use train::TrainConfig;
