//! Spectral mesh regression toolkit.
//!
//! Regresses 3D mesh vertex coordinates from single 2D images with a hybrid
//! convolutional / graph-convolutional network: an image encoder, a nested
//! feature-aggregation grid, and a Chebyshev graph decoder running over a
//! decimated mesh hierarchy. Everything is self-contained: dense tensors,
//! reverse-mode gradients, an SGD trainer, a quadric mesh decimator, and a
//! synthetic depth-image dataset generator for end-to-end verification.

pub mod diff;
pub mod error;
pub mod graph;
pub mod loss;
pub mod net;
pub mod nn;
pub mod real;
pub mod registry;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{real, to_f64, Precision, Real};
pub use rng::SeededRng;
pub use tensor::Tensor;
