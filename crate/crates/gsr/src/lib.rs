//! Group-robust sample reweighting for last-layer retraining.
//!
//! A frozen feature extractor's embeddings of a held-out set are
//! reweighted so that a linear softmax head fitted on them does well on
//! the worst group of a small target set. Each outer step fits the head
//! ([`linear_model`]), scores every held-out sample's influence on every
//! target group through the exact inverse Hessian ([`influence`]), and
//! takes a projected step on the weights ([`reweight`]). [`verify`] holds
//! the finite-difference oracles and reference baselines; [`cli`] the
//! drivers behind the `gsr` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod influence;
pub mod linear_model;
pub mod reweight;
pub mod verify;

pub use error::{GsrError, Result};
