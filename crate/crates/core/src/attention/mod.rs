//! Attention blocks of the decoder.

pub mod block;
pub mod coord;
pub mod mamba;
pub mod ssm;

pub use block::{effective_weights, AttentionConfig, ComprehensiveAttention};
pub use coord::CoordAttention;
pub use mamba::{MambaBlock, MambaDims};
pub use ssm::ssm_scan;
