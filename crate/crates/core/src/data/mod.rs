//! Real-image ingestion, deterministic splits, balanced classifier sets and
//! latent sampling.

mod balanced;
mod idx;
mod ingest;
pub mod synth;

pub use balanced::{build_balanced_set, LabeledImageSet, CORPUS_SOURCE};
pub use idx::{
    read_idx, write_idx_images, write_idx_labels, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use ingest::{
    load_corpus, load_dataset, load_dataset_cached, split_indices, Corpus, DatasetSplit,
};

use ndarray::{s, Array2, Array4, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Feature;
use crate::scalar::Scalar;
use crate::seed;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const LATENT_DIM: usize = 100;

/// Batch of single-channel 28×28 images, `[batch, 28, 28, 1]`, values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T = f32> {
    pixels: Array4<T>,
}

impl<T: Scalar> ImageBatch<T> {
    /// Validates shape and pixel range.
    pub fn new(pixels: Array4<T>) -> Result<Self> {
        let shape = pixels.shape();
        if shape[1..] != [IMAGE_SIDE, IMAGE_SIDE, 1] {
            return Err(Error::shape(format!(
                "expected [batch, 28, 28, 1], got {shape:?}"
            )));
        }
        let one = T::one();
        if let Some(v) = pixels.iter().find(|v| !(**v >= -one && **v <= one)) {
            return Err(Error::arg(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(ImageBatch { pixels })
    }

    /// Builds a batch from `[n, 784]` rows in row-major pixel order.
    pub fn from_rows(rows: Array2<T>) -> Result<Self> {
        if rows.ncols() != IMAGE_PIXELS {
            return Err(Error::shape(format!(
                "expected 784 pixels per row, got {}",
                rows.ncols()
            )));
        }
        let n = rows.nrows();
        let pixels = crate::nn::into_standard(rows)
            .into_shape_with_order((n, IMAGE_SIDE, IMAGE_SIDE, 1))
            .expect("contiguous rows");
        Self::new(pixels)
    }

    pub fn empty() -> Self {
        ImageBatch {
            pixels: Array4::zeros((0, IMAGE_SIDE, IMAGE_SIDE, 1)),
        }
    }

    pub(crate) fn from_feature_unchecked(f: Feature<T>) -> Self {
        debug_assert_eq!((f.h, f.w, f.channels()), (IMAGE_SIDE, IMAGE_SIDE, 1));
        let n = f.n;
        let pixels = crate::nn::into_standard(f.data)
            .into_shape_with_order((n, IMAGE_SIDE, IMAGE_SIDE, 1))
            .expect("contiguous");
        ImageBatch { pixels }
    }

    pub fn count(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn pixels(&self) -> &Array4<T> {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[T] {
        let start = i * IMAGE_PIXELS;
        &self.pixels.as_slice().expect("standard layout")[start..start + IMAGE_PIXELS]
    }

    /// Channels-last activation view used by the networks.
    pub fn to_feature(&self) -> Feature<T> {
        let n = self.count();
        let data = self
            .pixels
            .clone()
            .into_shape_with_order((n * IMAGE_PIXELS, 1))
            .expect("contiguous");
        Feature::new(data, n, IMAGE_SIDE, IMAGE_SIDE)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        ImageBatch {
            pixels: self.pixels.select(Axis(0), indices),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        ImageBatch {
            pixels: self.pixels.slice(s![start..end, .., .., ..]).to_owned(),
        }
    }

    pub fn concat(parts: &[&ImageBatch<T>]) -> Self {
        if parts.is_empty() {
            return Self::empty();
        }
        let views: Vec<_> = parts.iter().map(|p| p.pixels.view()).collect();
        ImageBatch {
            pixels: ndarray::concatenate(Axis(0), &views).expect("matching image shapes"),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageBatch<U> {
        ImageBatch {
            pixels: self.pixels.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
        }
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.pixels.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// Latent vectors `[batch, 100]` together with the seed that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch<T = f32> {
    pub vectors: Array2<T>,
    pub seed: u64,
}

impl<T: Scalar> LatentBatch<T> {
    pub fn count(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Draws i.i.d. standard-normal latents; identical `(seed, batch)` give
/// identical bytes.
pub fn sample_latents<T: Scalar>(seed: u64, batch: usize) -> Result<LatentBatch<T>> {
    if batch == 0 {
        return Err(Error::arg("latent batch must be positive"));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "latents", 0));
    let vectors = Array2::from_shape_simple_fn((batch, LATENT_DIM), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::from_f64_lossy(v)
    });
    Ok(LatentBatch { vectors, seed })
}

/// Anything that can produce generated images on demand, keyed by a stable id.
pub trait ImageSource<T: Scalar>: Sync {
    fn source_id(&self) -> &str;

    fn sample(&self, n: usize, seed: u64) -> Result<ImageBatch<T>>;
}
