//! Federated learning attack/defense simulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: a small multilayer perceptron with exact backpropagation,
//!   SGD local training and input-space Jacobians.
//! - [`data`]: IDX / CIFAR binary loaders, a synthetic generator, federated
//!   partitioning with regular and poor (label-skewed) clients, and the
//!   server-side validation split.
//! - [`adversary`]: label flipping, random weights, pattern-key backdoors and
//!   model-replacement boosting.
//! - [`xai`]: local linear explanations (importance matrices over class
//!   probabilities), cosine similarity and greyscale rendering.
//! - [`aggregation`]: FedAvg and the robust baselines, plus the two
//!   quantifier-weighted defenses (accuracy-ordered and explanation-ordered).
//! - [`sim`]: experiment configuration, rounds of learning, metrics and
//!   report emission.

pub mod adversary;
pub mod aggregation;
pub mod data;
mod error;
pub mod model;
pub mod rng;
pub mod sim;
pub mod xai;

pub use error::{Error, Result};
