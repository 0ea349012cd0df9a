//! Personalized federated learning with model-components self-attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: MLR / one-hidden-layer DNN, softmax cross-entropy, SGD.
//! - [`data`]: synthetic Non-IID federations, label sharding, IDX / CIFAR readers.
//! - [`aggregation`]: per-layer cosine-softmax attention and the baseline rules.
//! - [`engine`]: client sampling, proximal local training, the round loop and
//!   the algorithm registry.
//! - [`metrics`]: per-round evaluation, BMTA and CSV output.

pub mod aggregation;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nn;

pub use error::{Error, ErrorKind, Result};
