//! Domain generalization through discrepancy-minimizing embeddings and
//! generative nearest neighbors.
//!
//! The pipeline: [`ddmn`] learns a unit-norm embedding that collapses each
//! class across source domains; [`genlatent`] fits a VAE over those
//! embeddings; [`nns`] searches the VAE latent space for the source point
//! nearest a target embedding; [`classify`] labels the retrieved neighbor.
//! [`synthgen`] produces multi-domain data with a known posterior and
//! [`theorylab`] measures divergences, Bayes risk and the resulting risk
//! bounds. Everything differentiable runs on [`numcore`].

// Guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod ddmn;
pub mod error;
pub mod exec;
pub mod genlatent;
pub mod nns;
pub mod numcore;
pub mod seed;
pub mod synthgen;
pub mod theorylab;

pub use error::{Error, Result};
pub use exec::Execution;
