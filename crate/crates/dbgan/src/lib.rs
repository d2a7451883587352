//! Unsupervised graph representation learning with a bidirectional adversarial
//! autoencoder whose latent prior is a kernel density estimate over
//! DPP-selected prototype nodes.
//!
//! Modules, bottom-up:
//!
//! * [`graph`]: text loaders, normalized sparse adjacency, link-prediction splits.
//! * [`autodiff`]: tape-based reverse-mode differentiation with double backprop.
//! * [`nn`]: GCN encoder/generator, MLP critics, Glorot init, Adam, checkpoints.
//! * [`prior`]: DPP prototype selection, PCA, Gaussian KDE prior.
//! * [`train`]: adversarial and reconstruction losses, gradient penalty, training loop.
//! * [`metrics`]: AUC/AP, k-means, ACC/NMI/ARI and end-to-end evaluation.
//! * [`cli`]: command implementations behind the `dbgan` binary.

pub mod autodiff;
pub mod cli;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod train;
