//! Sequential (lifelong) learning with representation-sparsity regularizers.
//!
//! The crate bundles a small dense network with exact backpropagation
//! ([`nn`]), closed-form penalties with analytic gradients ([`regularizers`]),
//! parameter and neuron importance estimation ([`importance`]), a task-sequence
//! trainer that assembles the full consolidated objective ([`trainer`]),
//! dataset builders ([`data`]), measurements and report export ([`metrics`]),
//! a file-backed run configuration ([`config`]) with its driver
//! ([`experiment`]), and a finite-difference verification suite
//! ([`gradcheck`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod importance;
pub mod metrics;
pub mod nn;
pub mod regularizers;
pub mod trainer;

pub use error::{Error, Result};
