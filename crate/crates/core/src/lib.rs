//! Multi-agent simulation of artifact creation and social representation
//! formation.
//!
//! Agents own a small variational generative model (encoder, decoder and a
//! log-density-ratio discriminator) and a FIFO memory of 2-D artifacts. Each
//! step they create artifacts by minimizing expected free energy, selectively
//! memorize neighbours' creations, exchange 4-D latent representations via a
//! Metropolis–Hastings naming game, and update their models. The
//! [`analysis`] module turns run logs into Wasserstein, Gromov–Wasserstein/MDS,
//! RSA and acceptance-network tables.

pub mod agent;
pub mod analysis;
pub mod cli;
pub mod error;
pub mod genmodel;
pub mod numerics;
pub mod sim;
pub mod social;

pub use error::{Error, Result};
