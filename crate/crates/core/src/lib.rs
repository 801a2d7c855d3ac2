//! Privacy/utility trade-off toolkit for federated learning.
//!
//! Exact finite-world verification of the Bayesian trade-off bounds lives in
//! [`bayesian_privacy`]; the empirical side (FedAvg simulation, gradient
//! inversion, distortion mechanisms and the experiment harness) uses small
//! dense models from [`numerics`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod bayesian_privacy;
pub mod distort;
pub mod distributions;
pub mod error;
pub mod federation;
pub mod harness;
pub mod numerics;
pub mod seed;

pub use distributions::DiscreteDist;
pub use error::{Error, Result};
pub use numerics::{Dataset, Model, ModelKind, Vector};
