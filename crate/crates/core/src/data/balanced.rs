use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::{ImageBatch, ImageSource, IMAGE_PIXELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Provenance id used for real images.
pub const CORPUS_SOURCE: &str = "corpus";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Item {
    label: u8,
    source: u16,
    index: u32,
}

/// Real/generated training set. Real images are referenced by index into a
/// shared pool and reused cyclically, so repetition costs no memory.
#[derive(Clone, Debug)]
pub struct LabeledImageSet<T = f32> {
    real: Arc<ImageBatch<T>>,
    generated: ImageBatch<T>,
    sources: Vec<String>,
    items: Vec<Item>,
}

impl<T: Scalar> LabeledImageSet<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Per-item label: 1 = real, 0 = generated.
    pub fn label(&self, i: usize) -> u8 {
        self.items[i].label
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }

    /// Source id of item `i` ([`CORPUS_SOURCE`] or a generator id).
    pub fn provenance(&self, i: usize) -> &str {
        &self.sources[self.items[i].source as usize]
    }

    /// Index of item `i` within its backing store (real pool or generated batch).
    pub fn store_index(&self, i: usize) -> usize {
        self.items[i].index as usize
    }

    /// Materializes the listed items as an image batch plus label vector.
    pub fn gather(&self, indices: &[usize]) -> (ImageBatch<T>, Vec<T>) {
        let mut rows = Array2::<T>::zeros((indices.len(), IMAGE_PIXELS));
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            let it = self.items[i];
            let src = if it.label == 1 {
                self.real.image(it.index as usize)
            } else {
                self.generated.image(it.index as usize)
            };
            rows.row_mut(r)
                .as_slice_mut()
                .expect("standard")
                .copy_from_slice(src);
            labels.push(if it.label == 1 { T::one() } else { T::zero() });
        }
        (
            ImageBatch::from_rows(rows).expect("stored images are valid"),
            labels,
        )
    }
}

/// Samples `samples_per_generator` images from every generator and pairs
/// them with an equal number of real images. The real pool is visited in a
/// seeded order and wraps around when more real images are needed than exist.
pub fn build_balanced_set<T: Scalar>(
    real: &Arc<ImageBatch<T>>,
    generators: &[&dyn ImageSource<T>],
    samples_per_generator: usize,
    seed: u64,
) -> Result<LabeledImageSet<T>> {
    if generators.is_empty() {
        return Err(Error::arg("balanced set needs at least one generator"));
    }
    if samples_per_generator == 0 {
        return Err(Error::arg("samples_per_generator must be positive"));
    }
    if real.is_empty() {
        return Err(Error::arg("real image pool is empty"));
    }
    let mut sources = vec![CORPUS_SOURCE.to_string()];
    let mut parts = Vec::with_capacity(generators.len());
    let mut items = Vec::with_capacity(2 * generators.len() * samples_per_generator);
    for (j, g) in generators.iter().enumerate() {
        let batch = g.sample(
            samples_per_generator,
            seed::derive_seed(seed, "balanced-gen", j as u64),
        )?;
        if batch.count() != samples_per_generator {
            return Err(Error::shape(format!(
                "generator {} returned {} images, expected {}",
                g.source_id(),
                batch.count(),
                samples_per_generator
            )));
        }
        sources.push(g.source_id().to_string());
        let base = j * samples_per_generator;
        items.extend((0..samples_per_generator).map(|k| Item {
            label: 0,
            source: (j + 1) as u16,
            index: (base + k) as u32,
        }));
        parts.push(batch);
    }
    let generated = ImageBatch::concat(&parts.iter().collect::<Vec<_>>());
    let n_generated = generated.count();

    let mut order: Vec<usize> = (0..real.count()).collect();
    order.shuffle(&mut seed::rng(seed::derive_seed(seed, "balanced-real", 0)));
    items.extend((0..n_generated).map(|k| Item {
        label: 1,
        source: 0,
        index: order[k % order.len()] as u32,
    }));

    Ok(LabeledImageSet {
        real: Arc::clone(real),
        generated,
        sources,
        items,
    })
}
