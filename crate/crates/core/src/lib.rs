//! Instance credibility inference for few-shot classification.
//!
//! A base linear classifier pseudo-labels unlabeled embeddings; a group-lasso
//! regression over per-instance incidental parameters ranks those
//! pseudo-labels by how early each instance's parameters vanish along the
//! regularization path, and the most credible ones are absorbed into the
//! support set before retraining.
//!
//! Module map:
//! - [`linalg`]: pseudo-inverse, hat matrix, annihilator
//! - [`dimred`]: L2 normalization and PCA
//! - [`glasso`]: lambda grid, blockwise coordinate descent, vanish points
//! - [`classify`]: logistic regression and linear SVM
//! - [`engine`]: ranking, selection strategies, the self-taught loop
//! - [`episodes`]: episode sampling and evaluation
//! - [`dataset`]: ICIF/CSV storage and the synthetic generator
//! - [`cli`]: the `ici` command-line front end

pub mod classify;
pub mod cli;
pub mod dataset;
pub mod dimred;
pub mod engine;
pub mod episodes;
pub mod error;
pub mod glasso;
pub mod linalg;
mod optim;

pub use error::{IciError, Result};
