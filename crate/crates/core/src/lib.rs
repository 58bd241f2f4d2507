//! Bayesian SEIR-with-deaths epidemic inference with a kernel density
//! particle filter.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod kdpf;
pub mod model;
pub mod observation;
pub mod priors;
pub mod rng;
pub mod sampling;
pub mod simulator;
pub mod summary;

pub use error::{Error, Result};
