//! Differentiable layers: the 2D convolution stack and the graph layers.

pub mod act;
pub mod conv;
pub mod dense;
pub mod graphconv;
pub mod linalg;
pub mod norm;
pub mod resample;
pub mod residual;

pub use act::{LeakyRelu, LEAKY_SLOPE};
pub use conv::{Conv2d, PointwiseConv};
pub use dense::FullyConnected;
pub use graphconv::{concat_last, slice_last, ChebConv, CsrCache, DenseGcnBlock, GraphUpsample};
pub use norm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use resample::BilinearUpsample2x;
pub use residual::ResidualBlock;
