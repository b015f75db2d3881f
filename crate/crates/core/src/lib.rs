//! Core of a model-heterogeneous personalized federated learning simulator.
//!
//! Every client couples a shared, server-aggregated small feature extractor
//! (the global expert) with its own private heterogeneous extractor (the
//! local expert). A per-client gating network weighs the two experts'
//! representations sample by sample and a private header classifies the
//! mixture. Only the small extractor ever leaves a client.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File
//! formats, configuration and the CLI live in the `pfedmoe` crate.
//!
//! Module map:
//! - [`tensor`], [`nn`]: dense tensors, sequential layer pipelines with
//!   reverse-mode gradients, SGD, cross-entropy and a finite-difference
//!   gradient checker.
//! - [`models`]: the five heterogeneous CNNs, extractor/header split,
//!   gating network, the per-client mixture of experts, and size/FLOP
//!   accounting.
//! - [`data`]: datasets, CIFAR-10 record decoding, a synthetic Gaussian
//!   generator, non-IID partitioners and stratified 8:2 splits.
//! - [`fed`]: client sampling, local training, weighted aggregation and the
//!   round state machine for pFedMoE, Standalone and FedAvg.
//! - [`metrics`]: accuracy, cost accounting, gate-weight logs,
//!   representation export and the parameter-variation diagnostic.
//! - [`snapshot`]: named parameter maps and their binary encoding.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod fed;
pub mod math;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod snapshot;
pub mod tensor;

pub use error::{Error, Result};
pub use snapshot::Snapshot;
pub use tensor::Tensor;

/// Scalar type used for every tensor element.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used for every tensor element.
#[cfg(feature = "f32")]
pub type Real = f32;
