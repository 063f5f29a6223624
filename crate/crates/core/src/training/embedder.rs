use rand::seq::SliceRandom;

use super::TrainSpec;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::models::{softmax_cross_entropy, CapacityTier, DigitEmbedderParams};
use crate::nn::Adam;
use crate::seed;

/// Trains the ten-way digit network used as the feature space for
/// sample-quality distances. Needs digit labels on the train split.
pub fn train_embedder(
    data: &DatasetSplit,
    tier: &CapacityTier,
    spec: &TrainSpec,
    seed: u64,
) -> Result<DigitEmbedderParams<f32>> {
    spec.validate()?;
    let labels = data
        .train_labels
        .as_ref()
        .ok_or_else(|| Error::dependency("digit labels are required to train the embedder"))?;
    if labels.iter().any(|&l| l > 9) {
        return Err(Error::arg("digit labels must be in 0..=9"));
    }
    let mut params =
        DigitEmbedderParams::init(seed::derive_seed(seed, "embedder", 0), tier.clone());
    let mut opt = Adam::new(spec.optimizer, &params);
    let mut rng = seed::rng(seed::derive_seed(seed, "embedder-batches", 0));
    let mut order: Vec<usize> = (0..data.train.count()).collect();
    let mut cursor = order.len();
    let n = spec.batch_size.min(order.len());
    for _ in 0..spec.steps {
        if cursor + n > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + n];
        cursor += n;
        let images = data.train.select(idx);
        let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let (logits, cache) = params.forward(&images);
        let (_, d_logits) = softmax_cross_entropy(&logits, &y);
        let mut grads = params.zeros_like();
        params.backward(&cache, &d_logits, &mut grads);
        opt.step(&mut params, &grads);
    }
    Ok(params)
}
