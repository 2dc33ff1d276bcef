//! The end-to-end segmentation network and its training loop.

pub mod config;
pub mod model;
pub mod train;

pub use config::{Ablation, Modality, NetworkConfig};
pub use model::{parameter_count, Network};
pub use train::{
    evaluate_examples, model_input, prepare_examples, prepare_input, train_toy, AdamW, Example, TrainConfig,
    TrainHistory,
};
