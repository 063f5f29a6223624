use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::models::DigitEmbedderParams;

/// Ridge added to both covariances when either is singular.
pub const FRECHET_RIDGE: f64 = 1e-6;
/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Maps images into a fixed feature space.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed_images(&self, images: &ImageBatch<f32>) -> Result<Array2<f64>>;
}

impl Embedder for DigitEmbedderParams<f32> {
    fn dim(&self) -> usize {
        crate::models::EMBED_DIM
    }

    fn embed_images(&self, images: &ImageBatch<f32>) -> Result<Array2<f64>> {
        Ok(self.embed(images)?.mapv(f64::from))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetScore {
    pub value: f64,
    /// True when a covariance was singular and the ridge was applied.
    pub regularized: bool,
}

fn moments(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        let c = DVector::from_fn(d, |j, _| row[j] - mean[j]);
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    (mean, symmetrize(cov))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = cov.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max <= 0.0 || min <= RANK_TOLERANCE * max
}

/// `tr sqrt(a b)` for symmetric PSD `a`, `b`, via `sqrt(a) b sqrt(a)`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(a.clone());
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let sqrt_a = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    let inner = symmetrize(&sqrt_a * b * &sqrt_a);
    inner
        .symmetric_eigenvalues()
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum()
}

/// Fréchet distance between Gaussians fitted to two feature sets (rows are
/// samples). Symmetric in its arguments by construction.
pub fn frechet_from_features(a: &Array2<f64>, b: &Array2<f64>) -> Result<FrechetScore> {
    let d = a.ncols();
    if b.ncols() != d {
        return Err(Error::shape(format!(
            "feature widths {} and {} differ",
            d,
            b.ncols()
        )));
    }
    if d == 0 || a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::arg(
            "each feature set needs at least two samples of non-zero width",
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::arg("features contain non-finite values"));
    }
    let (mu_a, mut cov_a) = moments(a);
    let (mu_b, mut cov_b) = moments(b);
    let regularized = is_singular(&cov_a) || is_singular(&cov_b);
    if regularized {
        let ridge = DMatrix::identity(d, d) * FRECHET_RIDGE;
        cov_a += &ridge;
        cov_b += &ridge;
    }
    let diff = (&mu_a - &mu_b).norm_squared();
    let cross = (trace_sqrt_product(&cov_a, &cov_b) + trace_sqrt_product(&cov_b, &cov_a)) / 2.0;
    let value = diff + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    let scale = 1.0 + cov_a.trace() + cov_b.trace() + diff;
    if value < -1e-8 * scale {
        return Err(Error::arg(format!("negative Fréchet distance {value}")));
    }
    Ok(FrechetScore {
        value: value.max(0.0),
        regularized,
    })
}

/// Embeds both image sets and compares their feature distributions.
pub fn frechet_distance(
    embedder: &dyn Embedder,
    a: &ImageBatch<f32>,
    b: &ImageBatch<f32>,
) -> Result<FrechetScore> {
    frechet_from_features(&embedder.embed_images(a)?, &embedder.embed_images(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn one_dimensional_gaussians() {
        let mut rng = crate::seed::rng(5);
        let na = Normal::new(1.0, 2.0).unwrap();
        let nb = Normal::new(-0.5, 0.5).unwrap();
        let a = Array2::from_shape_fn((20000, 1), |_| na.sample(&mut rng));
        let b = Array2::from_shape_fn((20000, 1), |_| nb.sample(&mut rng));
        // (mu_a - mu_b)^2 + (s_a - s_b)^2
        let expected = 1.5f64.powi(2) + 1.5f64.powi(2);
        let got = frechet_from_features(&a, &b).unwrap();
        assert!((got.value - expected).abs() < 0.1, "{got:?}");
        assert!(!got.regularized);
    }

    #[test]
    fn identical_sets_and_degenerate_covariance() {
        let mut rng = crate::seed::rng(6);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a = Array2::from_shape_fn((300, 8), |_| n.sample(&mut rng));
        let s = frechet_from_features(&a, &a).unwrap();
        assert!(s.value.abs() < 1e-6);

        let mut flat = a.clone();
        flat.column_mut(3).fill(0.25);
        let s = frechet_from_features(&flat, &a).unwrap();
        assert!(s.regularized && s.value.is_finite() && s.value > 0.0);
        assert!(frechet_from_features(&a, &Array2::zeros((5, 3))).is_err());
    }
}
