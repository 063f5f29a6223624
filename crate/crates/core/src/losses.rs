//! Generator, discriminator and classifier objectives.
//!
//! Every function takes probabilities that are already clamped to
//! `[ε, 1 - ε]` and returns the batch mean. The `*_grad` variants also return
//! the gradient of that mean with respect to each probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `-log d`
    Standard,
    /// `-[log d + φ Σ_j log c_j]`, one classifier per preceding iteration.
    FoolAll,
    /// `-[log d + φ log c]`, one classifier from the previous iteration.
    Memoryless,
    /// `-[log d / (1+φ) + φ log c / (1+φ)]`
    Normalized,
    /// `-[log d + φ Σ_k log c_k]`, `t` classifiers of one iteration.
    MultiClassifier,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Standard => "standard",
            LossVariant::FoolAll => "fool_all",
            LossVariant::Memoryless => "memoryless",
            LossVariant::Normalized => "normalized",
            LossVariant::MultiClassifier => "multi_classifier",
        })
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "standard" => Ok(LossVariant::Standard),
            "fool_all" => Ok(LossVariant::FoolAll),
            "memoryless" => Ok(LossVariant::Memoryless),
            "normalized" => Ok(LossVariant::Normalized),
            "multi_classifier" | "multi" => Ok(LossVariant::MultiClassifier),
            _ => Err(Error::arg(format!("unknown loss variant {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    #[serde(default)]
    pub phi: f64,
    /// Number of classifiers `t` for [`LossVariant::MultiClassifier`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_count: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::standard()
    }
}

impl LossConfig {
    pub fn standard() -> Self {
        LossConfig {
            variant: LossVariant::Standard,
            phi: 0.0,
            classifier_count: None,
        }
    }

    pub fn new(variant: LossVariant, phi: f64) -> Result<Self> {
        let cfg = LossConfig {
            variant,
            phi,
            classifier_count: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn multi(phi: f64, t: usize) -> Result<Self> {
        let cfg = LossConfig {
            variant: LossVariant::MultiClassifier,
            phi,
            classifier_count: Some(t),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0) || !self.phi.is_finite() {
            return Err(Error::config(format!(
                "phi must be finite and non-negative, got {}",
                self.phi
            )));
        }
        if self.variant == LossVariant::MultiClassifier && self.classifier_count.unwrap_or(0) < 1 {
            return Err(Error::config(
                "multi_classifier needs classifier_count >= 1",
            ));
        }
        Ok(())
    }

    /// Number of frozen classifiers the loss expects at `iteration`.
    pub fn expected_classifiers(&self, iteration: usize) -> Result<usize> {
        self.validate()?;
        match self.variant {
            LossVariant::Standard => Ok(0),
            _ if iteration == 0 => Err(Error::config(format!(
                "{} loss is undefined at iteration 0",
                self.variant
            ))),
            LossVariant::FoolAll => Ok(iteration),
            LossVariant::Memoryless | LossVariant::Normalized => Ok(1),
            LossVariant::MultiClassifier => Ok(self.classifier_count.unwrap_or(0)),
        }
    }

    /// Checks a classifier count against the variant at `iteration`.
    pub fn check(&self, iteration: usize, classifiers: usize) -> Result<()> {
        let want = self.expected_classifiers(iteration)?;
        if want != classifiers {
            return Err(Error::config(format!(
                "{} loss at iteration {iteration} needs {want} frozen classifiers, got {classifiers}",
                self.variant
            )));
        }
        Ok(())
    }

    /// Weights `(w_d, w_c)` of the `log d` and `log c` terms.
    pub fn weights(&self) -> (f64, f64) {
        match self.variant {
            LossVariant::Standard => (1.0, 0.0),
            LossVariant::Normalized => (1.0 / (1.0 + self.phi), self.phi / (1.0 + self.phi)),
            _ => (1.0, self.phi),
        }
    }
}

/// Batch-mean loss and its gradient with respect to every probability input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub d_grad: Vec<T>,
    pub c_grads: Vec<Vec<T>>,
}

fn check_batch<T>(d: &[T], cs: &[&[T]]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::shape("empty probability batch"));
    }
    for c in cs {
        if c.len() != d.len() {
            return Err(Error::shape(format!(
                "classifier batch of {} does not match discriminator batch of {}",
                c.len(),
                d.len()
            )));
        }
    }
    Ok(())
}

fn batch_len<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("batch size")
}

/// `mean_i -[w_d log d_i + w_c Σ_k log c_k,i]`, shared by every generator variant.
fn weighted<T: Scalar>(d: &[T], cs: &[&[T]], wd: T, wc: T) -> T {
    let mut total = T::zero();
    for i in 0..d.len() {
        let mut cterm = T::zero();
        for c in cs {
            cterm += c[i].ln();
        }
        total += -(wd * d[i].ln() + wc * cterm);
    }
    total / batch_len(d.len())
}

fn weighted_grad<T: Scalar>(d: &[T], cs: &[&[T]], wd: T, wc: T) -> LossGrad<T> {
    let n: T = batch_len(d.len());
    LossGrad {
        loss: weighted(d, cs, wd, wc),
        d_grad: d.iter().map(|&v| -wd / (v * n)).collect(),
        c_grads: cs
            .iter()
            .map(|c| c.iter().map(|&v| -wc / (v * n)).collect())
            .collect(),
    }
}

pub fn gen_loss_standard<T: Scalar>(d: &[T]) -> T {
    weighted(d, &[], T::one(), T::zero())
}

pub fn gen_loss_fool_all<T: Scalar>(d: &[T], c_list: &[&[T]], phi: T) -> T {
    weighted(d, c_list, T::one(), phi)
}

pub fn gen_loss_memoryless<T: Scalar>(d: &[T], c: &[T], phi: T) -> T {
    weighted(d, &[c], T::one(), phi)
}

pub fn gen_loss_normalized<T: Scalar>(d: &[T], c: &[T], phi: T) -> T {
    let (wd, wc) = normalized_weights(phi);
    weighted(d, &[c], wd, wc)
}

pub fn gen_loss_multi<T: Scalar>(d: &[T], c_list: &[&[T]], phi: T) -> T {
    weighted(d, c_list, T::one(), phi)
}

fn normalized_weights<T: Scalar>(phi: T) -> (T, T) {
    let denom = T::one() + phi;
    (T::one() / denom, phi / denom)
}

/// Generator loss for `config` at `iteration`, with per-term values and
/// gradients. `cs` holds one probability vector per frozen classifier.
pub fn generator_loss<T: Scalar>(
    config: &LossConfig,
    iteration: usize,
    d: &[T],
    cs: &[&[T]],
) -> Result<LossGrad<T>> {
    config.check(iteration, cs.len())?;
    check_batch(d, cs)?;
    let phi = T::from_f64_lossy(config.phi);
    let (wd, wc) = match config.variant {
        LossVariant::Standard => (T::one(), T::zero()),
        LossVariant::Normalized => normalized_weights(phi),
        _ => (T::one(), phi),
    };
    Ok(weighted_grad(d, cs, wd, wc))
}

/// `mean -log d_real + mean -log(1 - d_fake)`.
pub fn disc_loss<T: Scalar>(d_real: &[T], d_fake: &[T]) -> T {
    let real: T = d_real.iter().map(|&p| -p.ln()).sum::<T>() / batch_len(d_real.len());
    let fake: T = d_fake.iter().map(|&p| -(T::one() - p).ln()).sum::<T>() / batch_len(d_fake.len());
    real + fake
}

/// Discriminator loss with gradients `(∂/∂d_real, ∂/∂d_fake)`.
pub fn disc_loss_grad<T: Scalar>(d_real: &[T], d_fake: &[T]) -> (T, Vec<T>, Vec<T>) {
    let nr: T = batch_len(d_real.len());
    let nf: T = batch_len(d_fake.len());
    (
        disc_loss(d_real, d_fake),
        d_real.iter().map(|&p| -T::one() / (p * nr)).collect(),
        d_fake
            .iter()
            .map(|&p| T::one() / ((T::one() - p) * nf))
            .collect(),
    )
}

/// Binary cross-entropy of real-probabilities against 1 = real / 0 = generated labels.
pub fn classifier_bce<T: Scalar>(p_real: &[T], labels: &[T]) -> T {
    let n: T = batch_len(p_real.len());
    p_real
        .iter()
        .zip(labels)
        .map(|(&p, &y)| -(y * p.ln() + (T::one() - y) * (T::one() - p).ln()))
        .sum::<T>()
        / n
}

pub fn classifier_bce_grad<T: Scalar>(p_real: &[T], labels: &[T]) -> (T, Vec<T>) {
    let n: T = batch_len(p_real.len());
    let grad = p_real
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (-(y / p) + (T::one() - y) / (T::one() - p)) / n)
        .collect();
    (classifier_bce(p_real, labels), grad)
}

/// Chains `∂L/∂p` through the sigmoid head to `∂L/∂logit = ∂L/∂p · p(1 - p)`.
pub fn prob_grad_to_logit<T: Scalar>(p: &[T], dp: &[T]) -> ndarray::Array1<T> {
    p.iter()
        .zip(dp)
        .map(|(&p, &g)| g * p * (T::one() - p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn closed_form_values() {
        assert!(close(gen_loss_standard(&[0.5f64]), LN2, 1e-6));
        assert!(close(gen_loss_standard(&[0.25f64, 0.75]), 0.836988, 1e-5));
        assert!(gen_loss_standard(&[1.0 - 1e-7f64]) < 1e-6);
        let half = [0.5f64];
        assert!(close(
            gen_loss_fool_all(&half, &[&half, &half], 0.001),
            0.694533,
            1e-6
        ));
        assert!(close(
            gen_loss_memoryless(&[0.9f64], &[0.1], 1.0),
            2.407946,
            1e-5
        ));
        assert!(close(
            gen_loss_memoryless(&[0.3f64], &[0.3], 1.0),
            -2.0 * 0.3f64.ln(),
            1e-12
        ));
        for phi in [0.0, 0.5, 7.0, 1e4] {
            assert!(close(gen_loss_normalized(&half, &half, phi), LN2, 1e-12));
        }
        assert!(close(
            gen_loss_normalized(&[0.5f64], &[0.2], 1e12),
            -(0.2f64.ln()),
            1e-9
        ));
        assert!(close(
            gen_loss_multi(&half, &[&half, &half, &half], 0.001),
            0.695227,
            1e-6
        ));
        assert!(close(disc_loss(&[0.5f64], &[0.5]), 1.386294, 1e-6));
        assert!(disc_loss(&[1.0 - 1e-7f64], &[1e-7]) < 1e-6);
        assert!(close(
            classifier_bce(&[0.5f64; 4], &[1.0, 0.0, 1.0, 0.0]),
            LN2,
            1e-12
        ));
    }

    #[test]
    fn bce_matches_hand_computation() {
        let p = [0.9f64, 0.2, 0.6, 0.4];
        let y = [1.0f64, 0.0, 0.0, 1.0];
        let expect = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln() + 0.4f64.ln()) / 4.0;
        assert!(close(classifier_bce(&p, &y), expect, 1e-12));
    }

    #[test]
    fn identities_are_exact() {
        let d = [0.13f32, 0.5, 0.91];
        let c1 = [0.2f32, 0.33, 0.7];
        let c2 = [0.6f32, 0.01, 0.99];
        let std = gen_loss_standard(&d);
        assert_eq!(gen_loss_fool_all(&d, &[&c1, &c2], 0.0), std);
        assert_eq!(gen_loss_memoryless(&d, &c1, 0.0), std);
        assert_eq!(gen_loss_normalized(&d, &c1, 0.0), std);
        for phi in [0.001f32, 1.0, 100.0] {
            let m = gen_loss_memoryless(&d, &c1, phi);
            assert_eq!(gen_loss_fool_all(&d, &[&c1], phi), m);
            assert_eq!(gen_loss_multi(&d, &[&c1], phi), m);
        }
        assert_eq!(
            gen_loss_multi(&d, &[&c1, &c2], 0.5f32),
            gen_loss_multi(&d, &[&c2, &c1], 0.5f32)
        );
    }

    #[test]
    fn configuration_checks() {
        let fa = LossConfig::new(LossVariant::FoolAll, 0.001).unwrap();
        assert!(fa.check(3, 3).is_ok());
        assert!(matches!(fa.check(3, 2), Err(Error::Configuration(_))));
        assert!(matches!(fa.check(0, 0), Err(Error::Configuration(_))));
        assert!(LossConfig::standard().check(0, 0).is_ok());
        assert!(matches!(
            LossConfig::standard().check(0, 1),
            Err(Error::Configuration(_))
        ));
        assert!(LossConfig::multi(1.0, 0).is_err());
        assert!(LossConfig::new(LossVariant::Memoryless, -1.0).is_err());
        let j = serde_json::to_string(&LossConfig::multi(0.5, 3).unwrap()).unwrap();
        assert_eq!(
            j,
            r#"{"variant":"multi_classifier","phi":0.5,"classifier_count":3}"#
        );
    }

    #[test]
    fn generator_loss_dispatch_matches_scalar_forms() {
        let d = [0.3f64, 0.8];
        let c = [0.4f64, 0.45];
        let cfg = LossConfig::new(LossVariant::Normalized, 3.0).unwrap();
        let g = generator_loss(&cfg, 1, &d, &[&c]).unwrap();
        assert_eq!(g.loss, gen_loss_normalized(&d, &c, 3.0));
        assert!(matches!(
            generator_loss(&cfg, 1, &d, &[&c[..1]]),
            Err(Error::Shape(_))
        ));
    }
}
