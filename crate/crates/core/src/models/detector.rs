//! Real-vs-generated detectors: the co-trained discriminator and the
//! stand-alone classifier. Both map an image batch to one logit per image.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::tier::{CapacityTier, Multiplier};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvCache, Dense, Feature, Initializer, ParamSet, PoolCache};
use crate::scalar::{lit, Scalar};
use crate::seed;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;
pub const DETECTOR_KERNEL: usize = 3;
const SLOPE: f64 = super::generator::LEAKY_SLOPE;

/// Network producing one real-vs-generated logit per image.
pub trait Detector<T: Scalar>: ParamSet<T> + Clone + Sync {
    type Cache;

    fn forward_logits(&self, x: &Feature<T>) -> (Array1<T>, Self::Cache);

    /// Propagates `d_logits` back to the input image map. Parameter
    /// gradients are accumulated only when `grads` is given.
    fn backward_logits(
        &self,
        cache: &Self::Cache,
        d_logits: &Array1<T>,
        grads: Option<&mut Self>,
    ) -> Array2<T>;

    fn zeros_like(&self) -> Self;

    /// Clamped real-probabilities for a batch.
    fn probabilities(&self, images: &ImageBatch<T>) -> Result<Vec<T>> {
        if images.is_empty() {
            return Err(Error::shape("empty image batch"));
        }
        let (logits, _) = self.forward_logits(&images.to_feature());
        Ok(logits
            .iter()
            .map(|&l| clamp_probability(nn::sigmoid(l)))
            .collect())
    }
}

#[inline]
pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let eps: T = lit(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Discriminator widths. `width = 1` gives 32/64 channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub width: Multiplier,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            width: Multiplier::ONE,
        }
    }
}

/// Two strided 3×3 convolutions with LeakyReLU and a dense logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub config: DiscriminatorConfig,
    pub init_seed: u64,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub head: Dense<T>,
}

pub struct DiscriminatorCache<T> {
    n: usize,
    c1: ConvCache<T>,
    pre1: Array2<T>,
    c2: ConvCache<T>,
    pre2: Array2<T>,
    flat: Array2<T>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn init(seed: u64, config: DiscriminatorConfig) -> Self {
        let mut init = Initializer::new(seed::derive_seed(seed, "discriminator-init", 0));
        let (a, b) = (config.width.scale(32), config.width.scale(64));
        DiscriminatorParams {
            config,
            init_seed: seed,
            conv1: Conv2d::init(&mut init, 1, a, DETECTOR_KERNEL, 2, true),
            conv2: Conv2d::init(&mut init, a, b, DETECTOR_KERNEL, 2, true),
            head: Dense::init(&mut init, 7 * 7 * b, 1, true),
        }
    }
}

impl<T: Scalar> Detector<T> for DiscriminatorParams<T> {
    type Cache = DiscriminatorCache<T>;

    fn forward_logits(&self, x: &Feature<T>) -> (Array1<T>, Self::Cache) {
        let slope: T = lit(SLOPE);
        let (y1, c1) = self.conv1.forward(x);
        let a1 = Feature::new(nn::leaky_relu(&y1.data, slope), y1.n, y1.h, y1.w);
        let (y2, c2) = self.conv2.forward(&a1);
        let a2 = Feature::new(nn::leaky_relu(&y2.data, slope), y2.n, y2.h, y2.w);
        let flat = a2.flatten();
        let logits = self.head.forward(flat.view()).column(0).to_owned();
        (
            logits,
            DiscriminatorCache {
                n: x.n,
                c1,
                pre1: y1.data,
                c2,
                pre2: y2.data,
                flat,
            },
        )
    }

    fn backward_logits(
        &self,
        cache: &Self::Cache,
        d_logits: &Array1<T>,
        mut grads: Option<&mut Self>,
    ) -> Array2<T> {
        let slope: T = lit(SLOPE);
        let dl = d_logits.clone().insert_axis(ndarray::Axis(1));
        let d_flat = self.head.backward(
            cache.flat.view(),
            dl.view(),
            grads.as_deref_mut().map(|g| &mut g.head),
        );
        let c2 = self.conv2.out_channels();
        let d_a2 = Feature::unflatten(d_flat, 7, 7, c2);
        let d_pre2 = nn::leaky_relu_backward(&cache.pre2, &d_a2.data, slope);
        let d_a1 = self.conv2.backward(
            &cache.c2,
            14,
            14,
            &d_pre2,
            grads.as_deref_mut().map(|g| &mut g.conv2),
        );
        let d_pre1 = nn::leaky_relu_backward(&cache.pre1, &d_a1.data, slope);
        let dx = self
            .conv1
            .backward(&cache.c1, 28, 28, &d_pre1, grads.map(|g| &mut g.conv1));
        debug_assert_eq!(dx.n, cache.n);
        dx.data
    }

    fn zeros_like(&self) -> Self {
        DiscriminatorParams {
            config: self.config,
            init_seed: self.init_seed,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl<T: Scalar> ParamSet<T> for DiscriminatorParams<T> {
    fn params(&self) -> Vec<&[T]> {
        conv_dense_params(&self.conv1, &self.conv2, &self.head)
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        conv_dense_params_mut(&mut self.conv1, &mut self.conv2, &mut self.head)
    }
}

fn conv_dense_params<'a, T: Scalar>(
    c1: &'a Conv2d<T>,
    c2: &'a Conv2d<T>,
    head: &'a Dense<T>,
) -> Vec<&'a [T]> {
    vec![
        nn::slice(&c1.weight),
        nn::slice(c1.bias.as_ref().expect("bias")),
        nn::slice(&c2.weight),
        nn::slice(c2.bias.as_ref().expect("bias")),
        nn::slice(&head.weight),
        nn::slice(head.bias.as_ref().expect("bias")),
    ]
}

fn conv_dense_params_mut<'a, T: Scalar>(
    c1: &'a mut Conv2d<T>,
    c2: &'a mut Conv2d<T>,
    head: &'a mut Dense<T>,
) -> Vec<&'a mut [T]> {
    vec![
        nn::slice_mut(&mut c1.weight),
        nn::slice_mut(c1.bias.as_mut().expect("bias")),
        nn::slice_mut(&mut c2.weight),
        nn::slice_mut(c2.bias.as_mut().expect("bias")),
        nn::slice_mut(&mut head.weight),
        nn::slice_mut(head.bias.as_mut().expect("bias")),
    ]
}

/// Two 3×3 convolutions (32·tier and 64·tier channels), each followed by
/// ReLU and 2×2 max pooling, then a dense logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T> {
    pub tier: CapacityTier,
    pub init_seed: u64,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub head: Dense<T>,
}

/// Shared convolutional trunk state (classifier and embedder).
pub struct TrunkCache<T> {
    n: usize,
    c1: ConvCache<T>,
    pre1: Array2<T>,
    p1: PoolCache,
    c2: ConvCache<T>,
    pre2: Array2<T>,
    p2: PoolCache,
    pub(crate) flat: Array2<T>,
}

pub(crate) fn trunk_forward<T: Scalar>(
    conv1: &Conv2d<T>,
    conv2: &Conv2d<T>,
    x: &Feature<T>,
) -> TrunkCache<T> {
    let (y1, c1) = conv1.forward(x);
    let a1 = Feature::new(nn::relu(&y1.data), y1.n, y1.h, y1.w);
    let (m1, p1) = nn::max_pool2(&a1);
    let (y2, c2) = conv2.forward(&m1);
    let a2 = Feature::new(nn::relu(&y2.data), y2.n, y2.h, y2.w);
    let (m2, p2) = nn::max_pool2(&a2);
    TrunkCache {
        n: x.n,
        c1,
        pre1: y1.data,
        p1,
        c2,
        pre2: y2.data,
        p2,
        flat: m2.flatten(),
    }
}

pub(crate) fn trunk_backward<T: Scalar>(
    conv1: &Conv2d<T>,
    conv2: &Conv2d<T>,
    cache: &TrunkCache<T>,
    d_flat: Array2<T>,
    grads: Option<(&mut Conv2d<T>, &mut Conv2d<T>)>,
) -> Array2<T> {
    let (g1, g2) = match grads {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let d_m2 = Feature::unflatten(d_flat, 7, 7, conv2.out_channels());
    let d_a2 = nn::max_pool2_backward(&cache.p2, &d_m2.data);
    let d_pre2 = nn::relu_backward(&cache.pre2, &d_a2);
    let d_m1 = conv2.backward(&cache.c2, 14, 14, &d_pre2, g2);
    let d_a1 = nn::max_pool2_backward(&cache.p1, &d_m1.data);
    let d_pre1 = nn::relu_backward(&cache.pre1, &d_a1);
    let dx = conv1.backward(&cache.c1, 28, 28, &d_pre1, g1);
    debug_assert_eq!(dx.n, cache.n);
    dx.data
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn init(seed: u64, tier: CapacityTier) -> Self {
        let mut init = Initializer::new(seed::derive_seed(seed, "classifier-init", 0));
        let (a, b) = (tier.multiplier.scale(32), tier.multiplier.scale(64));
        ClassifierParams {
            tier,
            init_seed: seed,
            conv1: Conv2d::init(&mut init, 1, a, DETECTOR_KERNEL, 1, true),
            conv2: Conv2d::init(&mut init, a, b, DETECTOR_KERNEL, 1, true),
            head: Dense::init(&mut init, 7 * 7 * b, 1, true),
        }
    }

    pub fn conv_channels(&self) -> (usize, usize) {
        (self.conv1.out_channels(), self.conv2.out_channels())
    }

    pub fn conv_weight_count(&self) -> usize {
        self.conv1.weight.len() + self.conv2.weight.len()
    }
}

impl<T: Scalar> Detector<T> for ClassifierParams<T> {
    type Cache = TrunkCache<T>;

    fn forward_logits(&self, x: &Feature<T>) -> (Array1<T>, Self::Cache) {
        let cache = trunk_forward(&self.conv1, &self.conv2, x);
        let logits = self.head.forward(cache.flat.view()).column(0).to_owned();
        (logits, cache)
    }

    fn backward_logits(
        &self,
        cache: &Self::Cache,
        d_logits: &Array1<T>,
        grads: Option<&mut Self>,
    ) -> Array2<T> {
        let dl = d_logits.clone().insert_axis(ndarray::Axis(1));
        match grads {
            Some(g) => {
                let d_flat = self
                    .head
                    .backward(cache.flat.view(), dl.view(), Some(&mut g.head));
                trunk_backward(
                    &self.conv1,
                    &self.conv2,
                    cache,
                    d_flat,
                    Some((&mut g.conv1, &mut g.conv2)),
                )
            }
            None => {
                let d_flat = self.head.backward(cache.flat.view(), dl.view(), None);
                trunk_backward(&self.conv1, &self.conv2, cache, d_flat, None)
            }
        }
    }

    fn zeros_like(&self) -> Self {
        ClassifierParams {
            tier: self.tier.clone(),
            init_seed: self.init_seed,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl<T: Scalar> ParamSet<T> for ClassifierParams<T> {
    fn params(&self) -> Vec<&[T]> {
        conv_dense_params(&self.conv1, &self.conv2, &self.head)
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        conv_dense_params_mut(&mut self.conv1, &mut self.conv2, &mut self.head)
    }
}

/// Clamped real-probabilities from the discriminator.
pub fn discriminator_forward<T: Scalar>(
    params: &DiscriminatorParams<T>,
    images: &ImageBatch<T>,
) -> Result<Vec<T>> {
    params.probabilities(images)
}

/// Clamped real-probabilities from a classifier.
pub fn classifier_forward<T: Scalar>(
    params: &ClassifierParams<T>,
    images: &ImageBatch<T>,
) -> Result<Vec<T>> {
    params.probabilities(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng as _;

    fn noise(n: usize, seed: u64) -> ImageBatch<f32> {
        let mut r = seed::rng(seed);
        ImageBatch::new(Array4::from_shape_simple_fn((n, 28, 28, 1), || {
            r.gen_range(-1.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn probabilities_stay_clamped() {
        let d = DiscriminatorParams::<f32>::init(1, DiscriminatorConfig::default());
        let c = ClassifierParams::<f32>::init(1, CapacityTier::parse("1/4").unwrap());
        let x = noise(16, 2);
        for p in discriminator_forward(&d, &x)
            .unwrap()
            .into_iter()
            .chain(classifier_forward(&c, &x).unwrap())
        {
            assert!(p >= 1e-7 && p <= 1.0 - 1e-7);
        }
        // saturated head still clamps
        let mut hot = c.clone();
        hot.head.bias.as_mut().unwrap()[0] = 1e4;
        assert!(classifier_forward(&hot, &x)
            .unwrap()
            .iter()
            .all(|&p| p == clamp_probability(1.0f32)));
        hot.head.bias.as_mut().unwrap()[0] = -1e4;
        assert!(classifier_forward(&hot, &x)
            .unwrap()
            .iter()
            .all(|&p| p == clamp_probability(0.0f32)));
    }

    #[test]
    fn fresh_discriminator_is_near_chance() {
        let d = DiscriminatorParams::<f32>::init(5, DiscriminatorConfig::default());
        let p = discriminator_forward(&d, &noise(1000, 3)).unwrap();
        let mean = p.iter().sum::<f32>() / p.len() as f32;
        assert!((mean - 0.5).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn duplicates_score_identically() {
        let c = ClassifierParams::<f32>::init(1, CapacityTier::standard());
        let x = noise(3, 4);
        let dup = ImageBatch::concat(&[&x, &x.select(&[1])]);
        let p = classifier_forward(&c, &dup).unwrap();
        assert_eq!(p[1], p[3]);
        let d = DiscriminatorParams::<f32>::init(1, DiscriminatorConfig::default());
        let p = discriminator_forward(&d, &dup).unwrap();
        assert_eq!(p[1], p[3]);
    }

    #[test]
    fn tier_channels_and_weight_ratio() {
        let std = ClassifierParams::<f32>::init(1, CapacityTier::standard());
        assert_eq!(std.conv_channels(), (32, 64));
        let small = ClassifierParams::<f32>::init(1, CapacityTier::parse("0.25").unwrap());
        assert_eq!(small.conv_channels(), (8, 16));
        let big = ClassifierParams::<f32>::init(1, CapacityTier::parse("4").unwrap());
        assert_eq!(big.conv2.weight.len(), 256 * small.conv2.weight.len());
        let ratio = big.conv_weight_count() as f64 / small.conv_weight_count() as f64;
        assert!((200.0..=256.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn empty_batch_is_a_shape_error() {
        let c = ClassifierParams::<f32>::init(1, CapacityTier::standard());
        assert!(matches!(
            classifier_forward(&c, &ImageBatch::empty()),
            Err(Error::Shape(_))
        ));
    }
}
