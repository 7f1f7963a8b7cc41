//! Spiking convolutional autoencoders with leaky integrate-and-fire
//! neurons, trained by backpropagation through time with
//! straight-through gradients, plus matched non-spiking autoencoder and
//! variational autoencoder baselines.
//!
//! Layering, bottom up:
//!
//! * [`tensor`], [`conv`] — dense/sparse numeric kernels
//! * [`tape`], [`gradcheck`] — reverse-mode autodiff and its oracle
//! * [`lif`], [`coding`] — neuron dynamics, spike encode/decode
//! * [`models`], [`losses`], [`optim`] — the three families, objectives, Adam
//! * [`data`], [`metrics`], [`analysis`] — IDX loading, activity stats, latent geometry
//! * [`config`], [`checkpoint`], [`experiment`] — run plumbing
//!
//! The CLI in `src/bin/sae.rs` and the runnable examples are thin
//! shells over [`experiment`].

pub mod analysis;
pub mod checkpoint;
pub mod coding;
pub mod config;
pub mod conv;
pub mod data;
pub mod experiment;
pub mod error;
pub mod gradcheck;
pub mod lif;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
