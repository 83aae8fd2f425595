//! Sparse autoencoder toolkit for modality-tagged transformer activations.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: the activation shard format, streaming readers and a
//!   planted-dictionary generator used as a ground-truth oracle.
//! - [`sae`]: encoder, dictionary decoder, losses and closed-form gradients.
//! - [`trainer`]: Adam, the warmup/plateau/decay schedule and dead-feature
//!   resampling.
//! - [`metrics`]: evaluation reports and the Pearson utility.
//! - [`ranking`]: cross-modal feature weights and whole-item ranking.
//! - [`patchfilter`]: per-patch scores and kept-patch masks.
//! - [`cli`]: the `saev` command-line front end.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod patchfilter;
pub mod ranking;
pub mod sae;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
