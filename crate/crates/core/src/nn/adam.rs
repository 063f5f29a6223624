use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::scalar::Scalar;

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state, one moment pair per trainable tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: ParamSet<T>>(cfg: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.params().iter().map(|p| p.len()).collect();
        Adam {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let b1 = T::from_f64_lossy(self.cfg.beta1);
        let b2 = T::from_f64_lossy(self.cfg.beta2);
        let eps = T::from_f64_lossy(self.cfg.epsilon);
        let c1 = 1.0 - self.cfg.beta1.powi(self.t);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t);
        let lr = T::from_f64_lossy(self.cfg.step_size * c2.sqrt() / c1);
        let grads = grads.params();
        for (((p, g), m), v) in params
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
