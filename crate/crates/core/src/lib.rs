//! Mixed attention network for cross-domain sequential recommendation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors and a reverse-mode gradient graph.
//! - [`data`]: interaction logs, sequence construction, negative sampling,
//!   chronological splits, and a planted-group synthetic generator.
//! - [`embeddings`], [`encoders`], [`mixed_attention`], [`prediction`]: the
//!   model layers, assembled by [`model`].
//! - [`metrics`]: AUC, GAUC, MRR and NDCG@k.
//! - [`training`]: initialisation, Adam, the epoch loop, checkpoints and the
//!   full-model gradient audit.
//! - [`analysis`]: group-representation export, k-means and PCA.
//! - [`config`] and [`pipeline`]: flat config files and the end-to-end
//!   commands used by the `man` binary.

pub mod analysis;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod encoders;
pub mod layers;
mod error;
pub mod metrics;
pub mod mixed_attention;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod prediction;
pub mod training;

pub use error::{Error, Result};
