use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::{lit, Scalar};

impl<T: Scalar> ParamSet<T> for Vec<T> {
    fn params(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

/// Central-difference estimate `(f(p + ε e_i) - f(p - ε e_i)) / 2ε` for
/// each flat coordinate `i` in `coords`.
pub fn finite_difference_gradient<T, P, F>(
    mut loss_fn: F,
    params: &P,
    epsilon: T,
    coords: &[usize],
) -> Result<Vec<T>>
where
    T: Scalar,
    P: ParamSet<T> + Clone,
    F: FnMut(&P) -> T,
{
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::arg(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let count = params.param_count();
    let mut probe = params.clone();
    let two: T = lit(2.0);
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        if i >= count {
            return Err(Error::arg(format!(
                "coordinate {i} out of range for {count} parameters"
            )));
        }
        let orig = *probe.param_at_mut(i).expect("in range");
        *probe.param_at_mut(i).expect("in range") = orig + epsilon;
        let up = loss_fn(&probe);
        *probe.param_at_mut(i).expect("in range") = orig - epsilon;
        let down = loss_fn(&probe);
        *probe.param_at_mut(i).expect("in range") = orig;
        out.push((up - down) / (two * epsilon));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
