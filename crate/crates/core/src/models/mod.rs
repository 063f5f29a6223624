//! Generator, discriminator, classifier and digit-embedder networks.

mod checkpoint;
mod detector;
mod embedder;
mod generator;
mod gradcheck;
mod tier;

pub use checkpoint::{
    encode_params, load_checkpoint, params_digest, read_meta, save_checkpoint, sidecar_path,
    verify_checkpoint, CheckpointMeta, ModelKind, CHECKPOINT_FORMAT,
};
pub use detector::{
    clamp_probability, classifier_forward, discriminator_forward, ClassifierParams, Detector,
    DiscriminatorCache, DiscriminatorConfig, DiscriminatorParams, TrunkCache, DETECTOR_KERNEL,
    PROB_EPS,
};
pub use embedder::{
    softmax_cross_entropy, DigitEmbedderParams, EmbedderCache, DIGIT_CLASSES, EMBED_DIM,
};
pub use generator::{
    generator_forward, GeneratorCache, GeneratorConfig, GeneratorParams, UpBlock, GEN_KERNEL,
    LEAKY_SLOPE, SEED_SIDE,
};
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use tier::{CapacityTier, Multiplier};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

/// Freshly initialized parameters of any network kind.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams<T> {
    Generator(GeneratorParams<T>),
    Discriminator(DiscriminatorParams<T>),
    Classifier(ClassifierParams<T>),
}

impl<T: Scalar> ModelParams<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Generator(_) => ModelKind::Generator,
            ModelParams::Discriminator(_) => ModelKind::Discriminator,
            ModelParams::Classifier(_) => ModelKind::Classifier,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelParams::Generator(p) => p.param_count(),
            ModelParams::Discriminator(p) => p.param_count(),
            ModelParams::Classifier(p) => p.param_count(),
        }
    }

    pub fn flat_params(&self) -> Vec<T> {
        match self {
            ModelParams::Generator(p) => p.flat_params(),
            ModelParams::Discriminator(p) => p.flat_params(),
            ModelParams::Classifier(p) => p.flat_params(),
        }
    }
}

/// Full-width generator/discriminator, or a classifier of the given tier.
pub fn init_model<T: Scalar>(
    kind: ModelKind,
    seed: u64,
    tier: Option<CapacityTier>,
) -> Result<ModelParams<T>> {
    init_model_scaled(kind, seed, tier, Multiplier::ONE)
}

/// As [`init_model`], with a width multiplier for generators and discriminators.
pub fn init_model_scaled<T: Scalar>(
    kind: ModelKind,
    seed: u64,
    tier: Option<CapacityTier>,
    width: Multiplier,
) -> Result<ModelParams<T>> {
    match (kind, tier) {
        (ModelKind::Classifier, Some(t)) => {
            Ok(ModelParams::Classifier(ClassifierParams::init(seed, t)))
        }
        (ModelKind::Classifier, None) => Err(Error::arg("classifier requires a capacity tier")),
        (_, Some(_)) => Err(Error::arg(format!("capacity tier given for a {kind}"))),
        (ModelKind::Generator, None) => Ok(ModelParams::Generator(GeneratorParams::init(
            seed,
            GeneratorConfig { width },
        ))),
        (ModelKind::Discriminator, None) => Ok(ModelParams::Discriminator(
            DiscriminatorParams::init(seed, DiscriminatorConfig { width }),
        )),
        (ModelKind::Embedder, None) => Err(Error::arg(
            "embedders are built with DigitEmbedderParams::init",
        )),
    }
}
