use ndarray::{Array2, Zip};

use crate::scalar::Scalar;

pub fn leaky_relu<T: Scalar>(x: &Array2<T>, slope: T) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient of [`leaky_relu`], masked by the pre-activation input.
pub fn leaky_relu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>, slope: T) -> Array2<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|g, &v| {
        if v <= T::zero() {
            *g *= slope;
        }
    });
    dx
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

pub fn tanh<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v.tanh())
}

/// Gradient of tanh expressed through its output `y`.
pub fn tanh_backward<T: Scalar>(y: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx)
        .and(y)
        .for_each(|g, &v| *g *= T::one() - v * v);
    dx
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn leaky_relu_masks_negatives() {
        let x = array![[-2.0f64, 0.5], [3.0, -0.1]];
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y, array![[-0.4, 0.5], [3.0, -0.020000000000000004]]);
        let g = leaky_relu_backward(&x, &Array2::ones((2, 2)), 0.2);
        assert_eq!(g, array![[0.2, 1.0], [1.0, 0.2]]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
