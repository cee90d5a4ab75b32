//! Finite-scale Lyapunov spectra, Oseledets filtrations and decompositions,
//! and avalanche-principle diagnostics for linear cocycles over rotations,
//! Bernoulli shifts and Markov shifts.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cocycle;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod grassmann;
pub mod ldtlab;
pub mod linalg;
pub mod lyapunov;
pub mod oseledets;
pub mod stats;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
