//! Segmentation of cluttered waste scenes from fused RGB and hyperspectral
//! imagery, built on a small dense-tensor library with reverse-mode
//! differentiation.
//!
//! The pipeline:
//!
//! * [`fusion`] reduces a hyperspectral cube to three principal-component
//!   channels and concatenates them with the RGB image;
//! * [`network`] runs a two-stage convolutional encoder and a decoder whose
//!   [`attention`] block mixes a directional-pooling attention path with a
//!   selective state-space path;
//! * [`loss`] and [`metrics`] supply the Dice + cross-entropy objective and
//!   IoU-based evaluation;
//! * [`gradcheck`] verifies every backward rule against central differences.

pub mod attention;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
