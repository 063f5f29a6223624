//! Hand-written reverse-mode building blocks.
//!
//! Activations are channels-last: a batch of `n` feature maps of size `h×w`
//! with `c` channels is stored as an `[n*h*w, c]` matrix, so dense layers and
//! 1×1 spatial maps share one representation.

mod act;
mod adam;
mod conv;
mod dense;
mod init;
mod norm;
mod pool;

pub use act::{leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, tanh, tanh_backward};
pub use adam::{Adam, AdamConfig};
pub use conv::{col2im, im2col, Conv2d, ConvCache, ConvTranspose2d, Geometry};
pub use dense::Dense;
pub use init::{glorot_uniform, Initializer};
pub use norm::{BatchNorm, BatchNormCache};
pub use pool::{max_pool2, max_pool2_backward, PoolCache};

use ndarray::Array2;

use crate::scalar::Scalar;

/// Channels-last activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature<T> {
    pub data: Array2<T>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl<T: Scalar> Feature<T> {
    pub fn new(data: Array2<T>, n: usize, h: usize, w: usize) -> Self {
        debug_assert_eq!(data.nrows(), n * h * w);
        Feature { data, n, h, w }
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    /// Reinterprets the map as `[n, h*w*c]` rows (one row per sample).
    pub fn flatten(self) -> Array2<T> {
        let cols = self.h * self.w * self.channels();
        let n = self.n;
        into_standard(self.data)
            .into_shape_with_order((n, cols))
            .expect("contiguous activation")
    }

    /// Inverse of [`Feature::flatten`].
    pub fn unflatten(rows: Array2<T>, h: usize, w: usize, c: usize) -> Self {
        let n = rows.nrows();
        debug_assert_eq!(rows.ncols(), h * w * c);
        let data = into_standard(rows)
            .into_shape_with_order((n * h * w, c))
            .expect("contiguous activation");
        Feature { data, n, h, w }
    }
}

pub(crate) fn into_standard<T: Scalar>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Ordered access to the tensors of a model.
///
/// `params` are trainable and participate in optimisation and gradient
/// checks; `buffers` hold non-trainable state (normalisation statistics).
/// Both orders are fixed by the architecture and define the checkpoint layout.
pub trait ParamSet<T: Scalar> {
    fn params(&self) -> Vec<&[T]>;

    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn buffers(&self) -> Vec<&[T]> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable parameters concatenated in canonical order.
    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p);
        }
        out
    }

    /// Mutable reference to the trainable coordinate at flat index `idx`.
    fn param_at_mut(&mut self, mut idx: usize) -> Option<&mut T> {
        for p in self.params_mut() {
            if idx < p.len() {
                return Some(&mut p[idx]);
            }
            idx -= p.len();
        }
        None
    }
}

pub(crate) fn slice_mut<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are contiguous")
}

pub(crate) fn slice<T, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> &[T] {
    a.as_slice().expect("parameters are contiguous")
}
