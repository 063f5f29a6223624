use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::init::Initializer;
use crate::scalar::Scalar;

/// Fully connected layer, `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn init(init: &mut Initializer, inputs: usize, outputs: usize, bias: bool) -> Self {
        Dense {
            weight: init.glorot(inputs, outputs, inputs, outputs),
            bias: bias.then(|| Array1::zeros(outputs)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Returns `dL/dx`; accumulates parameter gradients into `grads` when given.
    pub fn backward(
        &self,
        x: ArrayView2<T>,
        dy: ArrayView2<T>,
        grads: Option<&mut Dense<T>>,
    ) -> Array2<T> {
        if let Some(g) = grads {
            g.weight += &x.t().dot(&dy);
            if let Some(gb) = g.bias.as_mut() {
                *gb += &dy.sum_axis(Axis(0));
            }
        }
        dy.dot(&self.weight.t())
    }
}
