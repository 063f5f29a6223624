//! Sequential GAN-versus-classifier training chains: data, models, losses,
//! training, evaluation and orchestration.

pub mod chain;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model aliases.
pub type Generator = models::GeneratorParams<f32>;
pub type Discriminator = models::DiscriminatorParams<f32>;
pub type Classifier = models::ClassifierParams<f32>;
pub type DigitEmbedder = models::DigitEmbedderParams<f32>;
pub type Images = data::ImageBatch<f32>;
