use ndarray::{Array1, Array2, Zip};

use crate::scalar::{lit, Scalar};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-column batch normalization over `[rows, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    /// Batch statistics (train mode only), folded into the running averages
    /// by [`BatchNorm::commit`].
    pub(crate) batch_mean: Option<Array1<T>>,
    pub(crate) batch_var: Option<Array1<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        BatchNorm {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
        }
    }

    pub fn forward(&self, x: &Array2<T>, train: bool) -> (Array2<T>, BatchNormCache<T>) {
        let eps: T = lit(BN_EPS);
        let c = x.ncols();
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard");
        let (mean, var) = if train {
            let rows = T::from_usize(x.nrows()).expect("rows");
            let mut m = vec![T::zero(); c];
            for row in xs.chunks_exact(c) {
                for (a, &v) in m.iter_mut().zip(row) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|a| *a /= rows);
            let mut v = vec![T::zero(); c];
            for row in xs.chunks_exact(c) {
                for ((a, &x), &mu) in v.iter_mut().zip(row).zip(&m) {
                    let d = x - mu;
                    *a += d * d;
                }
            }
            v.iter_mut().for_each(|a| *a /= rows);
            (Array1::from(m), Array1::from(v))
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        let (mu, is, ga, be) = (
            mean.as_slice().expect("contiguous"),
            inv_std.as_slice().expect("contiguous"),
            self.gamma.as_slice().expect("contiguous"),
            self.beta.as_slice().expect("contiguous"),
        );
        for ((xr, hr), yr) in xs
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c))
        {
            for j in 0..c {
                let h = (xr[j] - mu[j]) * is[j];
                hr[j] = h;
                yr[j] = h * ga[j] + be[j];
            }
        }
        let shape = x.raw_dim();
        let cache = BatchNormCache {
            xhat: Array2::from_shape_vec(shape, xhat).expect("shape"),
            inv_std,
            batch_mean: train.then_some(mean),
            batch_var: train.then_some(var),
        };
        (Array2::from_shape_vec(shape, y).expect("shape"), cache)
    }

    /// Folds the batch statistics of a train-mode forward into the running averages.
    pub fn commit(&mut self, cache: &BatchNormCache<T>) {
        let (Some(m), Some(v)) = (&cache.batch_mean, &cache.batch_var) else {
            return;
        };
        let keep: T = lit(BN_MOMENTUM);
        let take = T::one() - keep;
        Zip::from(&mut self.running_mean)
            .and(m)
            .for_each(|r, &b| *r = keep * *r + take * b);
        Zip::from(&mut self.running_var)
            .and(v)
            .for_each(|r, &b| *r = keep * *r + take * b);
    }

    /// Gradient with respect to the input. Train-mode caches differentiate
    /// through the batch statistics; eval-mode caches treat them as constants.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Array2<T>,
        grads: Option<&mut BatchNorm<T>>,
    ) -> Array2<T> {
        let c = dy.ncols();
        let dys = dy.as_standard_layout();
        let dys = dys.as_slice().expect("standard");
        let xh = cache.xhat.as_slice().expect("standard");
        let ga = self.gamma.as_slice().expect("contiguous");
        let is = cache.inv_std.as_slice().expect("contiguous");
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (d, h) in dys.chunks_exact(c).zip(xh.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += d[j];
                sum_dy_xhat[j] += d[j] * h[j];
            }
        }
        if let Some(g) = grads {
            g.gamma += &Array1::from(sum_dy_xhat.clone());
            g.beta += &Array1::from(sum_dy.clone());
        }
        let mut dx = vec![T::zero(); dys.len()];
        if cache.batch_mean.is_none() {
            for (o, d) in dx.chunks_exact_mut(c).zip(dys.chunks_exact(c)) {
                for j in 0..c {
                    o[j] = d[j] * ga[j] * is[j];
                }
            }
        } else {
            // dxhat = dy*gamma, so its sums are the dy sums scaled by gamma
            let m = T::from_usize(dy.nrows()).expect("rows");
            let coef: Vec<T> = (0..c).map(|j| ga[j] * is[j] / m).collect();
            for ((o, d), h) in dx
                .chunks_exact_mut(c)
                .zip(dys.chunks_exact(c))
                .zip(xh.chunks_exact(c))
            {
                for j in 0..c {
                    o[j] = coef[j] * (d[j] * m - sum_dy[j] - h[j] * sum_dy_xhat[j]);
                }
            }
        }
        Array2::from_shape_vec(dy.raw_dim(), dx).expect("shape")
    }
}
