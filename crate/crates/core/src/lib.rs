//! Span-based named entity recognition with a supervised variational
//! information bottleneck and two auxiliary variational autoencoders
//! (span reconstruction and synonym generation) sharing one span encoder.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod vib;

pub use config::{Mode, ModelConfig, SharingMode};
pub use error::{Error, Result};
pub use model::Model;
pub use scalar::Scalar;
pub use trainer::{LossRecord, TrainState, Trainer};

/// Floating-point type used by every model in this crate.
pub type Real = f64;
pub type Tensor = autodiff::Tensor<Real>;
pub type Graph = autodiff::Graph<Real>;
pub type ParamStore = autodiff::ParamStore<Real>;
pub type Gradients = autodiff::Gradients<Real>;
