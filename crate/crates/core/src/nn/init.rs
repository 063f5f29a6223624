use ndarray::Array2;
use rand::Rng as _;

use crate::scalar::Scalar;
use crate::seed::{self, Rng};

/// Seeded weight initializer. Values are drawn in `f64` and cast, so `f32`
/// and `f64` instantiations of the same seed agree up to rounding.
pub struct Initializer {
    rng: Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: seed::rng(seed),
        }
    }

    pub fn glorot<T: Scalar>(
        &mut self,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Array2<T> {
        glorot_uniform(&mut self.rng, rows, cols, fan_in, fan_out)
    }
}

pub fn glorot_uniform<T: Scalar>(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        T::from_f64_lossy(rng.gen_range(-limit..limit))
    })
}
