//! Dense linear algebra, small networks, Adam and random streams.

mod adam;
mod linalg;
mod net;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use linalg::{euclidean, DenseMatrix, DenseVector};
pub use net::{Activation, BatchTape, FeedForwardNet, LayerShape};
pub use rng::{RngStream, Stage, StreamKey};
