//! Target-domain structural smoothing for unsupervised graph domain adaptation.
//!
//! A labelled source graph and an unlabelled target graph share one feature
//! and label space. A GNN encoder maps both into a latent space where the
//! model is trained on
//!
//! ```text
//! L = L_GC + α·L_DA + β·L_SR
//! ```
//!
//! * `L_GC`: softmax cross-entropy on the source labels ([`model`]),
//! * `L_DA`: squared MMD between source and target latents ([`discrepancy`]),
//! * `L_SR`: Laplacian smoothing of the target latents over a random-walk
//!   pruned adjacency ([`sampling`], [`smoothing`]).
//!
//! [`training`] runs the optimisation loop and metrics, [`cli`] drives the
//! `tdss` binary.

pub mod cli;
pub mod discrepancy;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod seed;
pub mod smoothing;
pub mod training;

pub use error::{Error, Result};
