use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{ClassifierInstance, GeneratorInstance, TrainSpec};
use crate::data::{build_balanced_set, DatasetSplit, ImageSource};
use crate::error::{Error, Result};
use crate::losses::{classifier_bce_grad, prob_grad_to_logit};
use crate::models::{clamp_probability, CapacityTier, ClassifierParams, Detector};
use crate::nn::{sigmoid, Adam};
use crate::seed;

#[derive(Clone, Debug)]
pub struct ClassifierSetup {
    pub id: String,
    /// Generated images drawn from each source generator.
    pub samples_per_generator: usize,
}

impl ClassifierSetup {
    pub fn new(id: impl Into<String>, samples_per_generator: usize) -> Self {
        ClassifierSetup {
            id: id.into(),
            samples_per_generator,
        }
    }
}

/// Trains a classifier on a balanced set of real training images and
/// samples from `sources`, which must all belong to one iteration.
pub fn train_classifier(
    real: &DatasetSplit,
    sources: &[&GeneratorInstance],
    tier: &CapacityTier,
    spec: &TrainSpec,
    seed: u64,
    setup: &ClassifierSetup,
) -> Result<ClassifierInstance> {
    spec.validate()?;
    let Some(first) = sources.first() else {
        return Err(Error::arg("classifier needs at least one source generator"));
    };
    if sources.iter().any(|g| g.iteration != first.iteration) {
        let its: Vec<usize> = sources.iter().map(|g| g.iteration).collect();
        return Err(Error::config(format!(
            "source generators span several iterations: {its:?}"
        )));
    }
    let pool = Arc::new(real.train.clone());
    let gens: Vec<&dyn ImageSource<f32>> = sources
        .iter()
        .map(|g| *g as &dyn ImageSource<f32>)
        .collect();
    let set = build_balanced_set(
        &pool,
        &gens,
        setup.samples_per_generator,
        seed::derive_seed(seed, "classifier-set", 0),
    )?;

    let mut params = ClassifierParams::init(seed::derive_seed(seed, "classifier", 0), tier.clone());
    let mut opt = Adam::new(spec.optimizer, &params);
    let mut rng = seed::rng(seed::derive_seed(seed, "classifier-batches", 0));
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = order.len();
    let n = spec.batch_size.min(set.len());
    for _ in 0..spec.steps {
        if cursor + n > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (images, labels) = set.gather(&order[cursor..cursor + n]);
        cursor += n;
        let (logits, cache) = params.forward_logits(&images.to_feature());
        let p: Vec<f32> = logits
            .iter()
            .map(|&l| clamp_probability(sigmoid(l)))
            .collect();
        let (_, dp) = classifier_bce_grad(&p, &labels);
        let mut grads = params.zeros_like();
        params.backward_logits(&cache, &prob_grad_to_logit(&p, &dp), Some(&mut grads));
        opt.step(&mut params, &grads);
    }
    Ok(ClassifierInstance {
        id: setup.id.clone(),
        params,
        iteration: first.iteration,
        source_generator_ids: sources.iter().map(|g| g.id.clone()).collect(),
        tier: tier.clone(),
        train_seed: seed,
    })
}
