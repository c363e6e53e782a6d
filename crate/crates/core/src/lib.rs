//! Disentangled structural/semantic node embeddings of heterogeneous graphs
//! on the Poincaré ball.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`manifold`]: plain-`f64` Poincaré-ball kernel (the reference geometry).
//! - [`autodiff`]: reverse-mode tape over dense matrices plus Adam.
//! - [`geometry`]: differentiable ball ops on the tape, with a Euclidean
//!   substitution mode for ablations.
//! - [`hetgraph`]: typed graph model, file ingestion, splits, perturbed
//!   views, negative sampling, Gromov hyperbolicity.
//! - [`layers`]: the structural encoder over the collapsed graph and the
//!   type-aware encoder with per-relation message passing.
//! - [`objectives`]: contrastive, mutual-information, discriminator and task
//!   losses plus Möbius fusion.
//! - [`trainer`]: end-to-end training with variants, early stopping and
//!   checkpointing.
//! - [`eval`]: metrics, the MI probe and robustness sweeps.
//! - [`synthetic`]: a seeded heterogeneous benchmark generator.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hetgraph;
pub mod layers;
pub mod manifold;
pub mod objectives;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{CoreError, Result};
