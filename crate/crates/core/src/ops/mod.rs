//! Differentiable primitives. Each submodule exposes plain tensor kernels and
//! the matching [`Tape`](crate::tape::Tape) methods that record them.

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod shape;

pub use conv::{causal_conv1d, conv2d, Conv2dParams};
pub use elementwise::{activation, sigmoid, softmax_last, softplus, Activation};
pub use linear::linear;
pub use norm::{batch_norm, layer_norm, Mode, RunningStats, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use pool::{avg_pool_x, avg_pool_y};
pub use resize::bilinear_resize;
pub use shape::{concat, concat_channels, narrow, permute};
