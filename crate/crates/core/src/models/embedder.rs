//! Ten-way digit classifier whose hidden layer serves as the feature space
//! for sample-quality distances.

use ndarray::{Array2, Axis};

use super::detector::{trunk_backward, trunk_forward, TrunkCache, DETECTOR_KERNEL};
use super::tier::CapacityTier;
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Dense, Initializer, ParamSet};
use crate::scalar::Scalar;
use crate::seed;

pub const EMBED_DIM: usize = 64;
pub const DIGIT_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DigitEmbedderParams<T> {
    pub tier: CapacityTier,
    pub init_seed: u64,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub hidden: Dense<T>,
    pub head: Dense<T>,
}

pub struct EmbedderCache<T> {
    trunk: TrunkCache<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
}

impl<T: Scalar> DigitEmbedderParams<T> {
    pub fn init(seed: u64, tier: CapacityTier) -> Self {
        let mut init = Initializer::new(seed::derive_seed(seed, "embedder-init", 0));
        let (a, b) = (tier.multiplier.scale(32), tier.multiplier.scale(64));
        DigitEmbedderParams {
            tier,
            init_seed: seed,
            conv1: Conv2d::init(&mut init, 1, a, DETECTOR_KERNEL, 1, true),
            conv2: Conv2d::init(&mut init, a, b, DETECTOR_KERNEL, 1, true),
            hidden: Dense::init(&mut init, 7 * 7 * b, EMBED_DIM, true),
            head: Dense::init(&mut init, EMBED_DIM, DIGIT_CLASSES, true),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DigitEmbedderParams {
            tier: self.tier.clone(),
            init_seed: self.init_seed,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            hidden: self.hidden.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Class logits `[n, 10]`.
    pub fn forward(&self, images: &ImageBatch<T>) -> (Array2<T>, EmbedderCache<T>) {
        let trunk = trunk_forward(&self.conv1, &self.conv2, &images.to_feature());
        let hidden_pre = self.hidden.forward(trunk.flat.view());
        let hidden = nn::relu(&hidden_pre);
        let logits = self.head.forward(hidden.view());
        (
            logits,
            EmbedderCache {
                trunk,
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &EmbedderCache<T>, d_logits: &Array2<T>, grads: &mut Self) {
        let d_hidden =
            self.head
                .backward(cache.hidden.view(), d_logits.view(), Some(&mut grads.head));
        let d_pre = nn::relu_backward(&cache.hidden_pre, &d_hidden);
        let d_flat = self.hidden.backward(
            cache.trunk.flat.view(),
            d_pre.view(),
            Some(&mut grads.hidden),
        );
        trunk_backward(
            &self.conv1,
            &self.conv2,
            &cache.trunk,
            d_flat,
            Some((&mut grads.conv1, &mut grads.conv2)),
        );
    }

    /// Hidden-layer activations (before the ReLU), one 64-d row per image.
    pub fn embed(&self, images: &ImageBatch<T>) -> Result<Array2<T>> {
        if images.is_empty() {
            return Err(Error::shape("empty image batch"));
        }
        let mut out = Array2::zeros((images.count(), EMBED_DIM));
        let chunk = 256;
        for start in (0..images.count()).step_by(chunk) {
            let end = (start + chunk).min(images.count());
            let part = images.slice(start, end);
            let trunk = trunk_forward(&self.conv1, &self.conv2, &part.to_feature());
            out.slice_mut(ndarray::s![start..end, ..])
                .assign(&self.hidden.forward(trunk.flat.view()));
        }
        Ok(out)
    }

    /// Most likely digit per image.
    pub fn predict(&self, images: &ImageBatch<T>) -> Vec<u8> {
        let (logits, _) = self.forward(images);
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> (T, Array2<T>) {
    let n = logits.nrows();
    let inv_n = T::one() / T::from_usize(n).expect("batch size");
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = T::zero();
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let y = labels[r] as usize;
        loss += z.ln() + m - row[y];
        for (k, &v) in row.iter().enumerate() {
            let p = (v - m).exp() / z;
            let t = if k == y { T::one() } else { T::zero() };
            grad[[r, k]] = (p - t) * inv_n;
        }
    }
    (loss * inv_n, grad)
}

impl<T: Scalar> ParamSet<T> for DigitEmbedderParams<T> {
    fn params(&self) -> Vec<&[T]> {
        let mut v = Vec::new();
        for c in [&self.conv1, &self.conv2] {
            v.push(nn::slice(&c.weight));
            v.push(nn::slice(c.bias.as_ref().expect("bias")));
        }
        for d in [&self.hidden, &self.head] {
            v.push(nn::slice(&d.weight));
            v.push(nn::slice(d.bias.as_ref().expect("bias")));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        for c in [&mut self.conv1, &mut self.conv2] {
            v.push(nn::slice_mut(&mut c.weight));
            v.push(nn::slice_mut(c.bias.as_mut().expect("bias")));
        }
        for d in [&mut self.hidden, &mut self.head] {
            v.push(nn::slice_mut(&mut d.weight));
            v.push(nn::slice_mut(d.bias.as_mut().expect("bias")));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};

    #[test]
    fn cross_entropy_matches_hand_values() {
        let logits = array![[0.0f64, 0.0], [2.0, 0.0]];
        let (l, g) = softmax_cross_entropy(&logits, &[0, 1]);
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        let expect = (2f64.ln() + (-(1.0 - p).ln())) / 2.0;
        assert!((l - expect).abs() < 1e-12);
        assert!((g[[0, 0]] + 0.25).abs() < 1e-12);
        assert!((g[[1, 1]] + p / 2.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_shape() {
        let e = DigitEmbedderParams::<f32>::init(3, CapacityTier::parse("1/4").unwrap());
        let x = ImageBatch::new(Array4::from_elem((300, 28, 28, 1), 0.1)).unwrap();
        let f = e.embed(&x).unwrap();
        assert_eq!(f.dim(), (300, EMBED_DIM));
        assert_eq!(f.row(0), f.row(299));
        assert_eq!(e.predict(&x.slice(0, 2)).len(), 2);
    }
}
