use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ImageBatch, ImageSource};
use crate::error::{Error, Result};
use crate::models::{ClassifierParams, Detector};
use crate::seed;
use crate::training::ClassifierInstance;

/// Images per forward pass during evaluation.
pub const SCORE_CHUNK: usize = 512;
/// Decision threshold on the real-probability.
pub const DECISION_THRESHOLD: f32 = 0.5;

/// Anything that maps images to real-probabilities.
pub trait Scorer: Sync {
    fn real_probabilities(&self, images: &ImageBatch<f32>) -> Result<Vec<f32>>;
}

impl Scorer for ClassifierParams<f32> {
    fn real_probabilities(&self, images: &ImageBatch<f32>) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(images.count());
        for start in (0..images.count()).step_by(SCORE_CHUNK) {
            let end = (start + SCORE_CHUNK).min(images.count());
            out.extend(self.probabilities(&images.slice(start, end))?);
        }
        if images.is_empty() {
            return Err(Error::shape("empty image batch"));
        }
        Ok(out)
    }
}

impl Scorer for ClassifierInstance {
    fn real_probabilities(&self, images: &ImageBatch<f32>) -> Result<Vec<f32>> {
        self.params.real_probabilities(images)
    }
}

/// Fraction of images scored as generated (`p_real < 0.5`).
pub fn fraction_flagged(probabilities: &[f32]) -> f64 {
    let hits = probabilities
        .iter()
        .filter(|&&p| p < DECISION_THRESHOLD)
        .count();
    hits as f64 / probabilities.len() as f64
}

/// Fraction of `n_samples` generated images that the classifier flags as
/// generated. 0 means the classifier is completely fooled.
pub fn accuracy_on_generated(
    classifier: &dyn Scorer,
    generator: &dyn ImageSource<f32>,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::arg("n_samples must be positive"));
    }
    let images = generator.sample(n_samples, seed)?;
    Ok(fraction_flagged(&classifier.real_probabilities(&images)?))
}

/// Correct-decision counts over an exactly balanced real/generated sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedAccuracy {
    pub real_correct: usize,
    pub real_total: usize,
    pub generated_correct: usize,
    pub generated_total: usize,
}

impl BalancedAccuracy {
    pub fn accuracy(&self) -> f64 {
        (self.real_correct + self.generated_correct) as f64
            / (self.real_total + self.generated_total) as f64
    }

    pub fn real_accuracy(&self) -> f64 {
        self.real_correct as f64 / self.real_total as f64
    }

    pub fn generated_accuracy(&self) -> f64 {
        self.generated_correct as f64 / self.generated_total as f64
    }
}

/// Per-generator seed used by [`accuracy_balanced`].
pub fn balanced_generator_seed(seed: u64, j: usize) -> u64 {
    seed::derive_seed(seed, "balanced-eval-gen", j as u64)
}

/// Draws `n_samples` generated images spread evenly over `generators`
/// (earlier generators take the remainder) and `n_samples` real images from
/// `real_eval`, reusing real images cyclically if needed.
pub fn accuracy_balanced(
    classifier: &dyn Scorer,
    generators: &[&dyn ImageSource<f32>],
    real_eval: &ImageBatch<f32>,
    n_samples: usize,
    seed: u64,
) -> Result<BalancedAccuracy> {
    if generators.is_empty() {
        return Err(Error::arg("balanced accuracy needs at least one generator"));
    }
    if n_samples < generators.len() {
        return Err(Error::arg(format!(
            "n_samples {n_samples} is smaller than the {} generators",
            generators.len()
        )));
    }
    if real_eval.is_empty() {
        return Err(Error::arg("real evaluation pool is empty"));
    }
    let k = generators.len();
    let mut generated_correct = 0;
    for (j, g) in generators.iter().enumerate() {
        let share = n_samples / k + usize::from(j < n_samples % k);
        let images = g.sample(share, balanced_generator_seed(seed, j))?;
        let p = classifier.real_probabilities(&images)?;
        generated_correct += p.iter().filter(|&&v| v < DECISION_THRESHOLD).count();
    }
    let mut order: Vec<usize> = (0..real_eval.count()).collect();
    order.shuffle(&mut seed::rng(seed::derive_seed(
        seed,
        "balanced-eval-real",
        0,
    )));
    let picks: Vec<usize> = (0..n_samples).map(|i| order[i % order.len()]).collect();
    let p = classifier.real_probabilities(&real_eval.select(&picks))?;
    let real_correct = p.iter().filter(|&&v| v >= DECISION_THRESHOLD).count();
    Ok(BalancedAccuracy {
        real_correct,
        real_total: n_samples,
        generated_correct,
        generated_total: n_samples,
    })
}

/// Accuracy on real images alone (`p_real >= 0.5`).
pub fn accuracy_on_real(classifier: &dyn Scorer, real: &ImageBatch<f32>) -> Result<f64> {
    let p = classifier.real_probabilities(real)?;
    Ok(1.0 - fraction_flagged(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    struct Constant(f32);

    impl Scorer for Constant {
        fn real_probabilities(&self, images: &ImageBatch<f32>) -> Result<Vec<f32>> {
            Ok(vec![self.0; images.count()])
        }
    }

    /// Calls positive-mean images real.
    struct Oracle;

    impl Scorer for Oracle {
        fn real_probabilities(&self, images: &ImageBatch<f32>) -> Result<Vec<f32>> {
            Ok((0..images.count())
                .map(|i| if images.image(i)[0] > 0.0 { 0.99 } else { 0.01 })
                .collect())
        }
    }

    struct Flat(f32, String);

    impl ImageSource<f32> for Flat {
        fn source_id(&self) -> &str {
            &self.1
        }
        fn sample(&self, n: usize, _seed: u64) -> Result<ImageBatch<f32>> {
            ImageBatch::new(Array4::from_elem((n, 28, 28, 1), self.0))
        }
    }

    #[test]
    fn threshold_logic() {
        let g = Flat(-0.5, "g".into());
        assert_eq!(
            accuracy_on_generated(&Constant(0.9), &g, 50, 1).unwrap(),
            0.0
        );
        assert_eq!(
            accuracy_on_generated(&Constant(0.1), &g, 50, 1).unwrap(),
            1.0
        );
        assert!(accuracy_on_generated(&Constant(0.1), &g, 0, 1).is_err());
    }

    #[test]
    fn oracle_is_perfect_and_identity_holds() {
        let real = ImageBatch::new(Array4::from_elem((7, 28, 28, 1), 0.5f32)).unwrap();
        let g1 = Flat(-0.5, "a".into());
        let g2 = Flat(-0.2, "b".into());
        let acc = accuracy_balanced(&Oracle, &[&g1, &g2], &real, 101, 3).unwrap();
        assert_eq!(acc.accuracy(), 1.0);
        assert_eq!(acc.real_total, acc.generated_total);

        let acc = accuracy_balanced(&Constant(0.7), &[&g1], &real, 40, 3).unwrap();
        let gen =
            accuracy_on_generated(&Constant(0.7), &g1, 40, balanced_generator_seed(3, 0)).unwrap();
        let real_acc = accuracy_on_real(&Constant(0.7), &real).unwrap();
        assert_eq!(acc.accuracy(), (gen + real_acc) / 2.0);
        assert_eq!(acc.accuracy(), 0.5);
    }
}
