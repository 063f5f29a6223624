use serde::{Deserialize, Serialize};

use super::accuracy::{accuracy_balanced, BalancedAccuracy};
use crate::data::{DatasetSplit, ImageSource};
use crate::error::{Error, Result};
use crate::models::CapacityTier;
use crate::seed;
use crate::training::{train_classifier, ClassifierSetup, GeneratorInstance, TrainSpec};

/// Settings shared by every point of a generalization curve.
#[derive(Clone, Debug)]
pub struct CurveSetup {
    pub tier: CapacityTier,
    pub spec: TrainSpec,
    pub samples_per_generator: usize,
    /// Generated (and, separately, real) images per evaluation.
    pub eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub train_ids: Vec<String>,
    pub accuracy: f64,
    pub counts: BalancedAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    pub held_out_ids: Vec<String>,
    pub points: Vec<CurvePoint>,
    pub seed: u64,
}

impl GeneralizationCurve {
    pub fn accuracy_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n == n).map(|p| p.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("n,accuracy,real_correct,real_total,generated_correct,generated_total\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:.6},{},{},{},{}\n",
                p.n,
                p.accuracy,
                p.counts.real_correct,
                p.counts.real_total,
                p.counts.generated_correct,
                p.counts.generated_total
            ));
        }
        out
    }
}

/// Trains one classifier per `n` on the first `n` generators of
/// `train_pool` and measures balanced accuracy against the held-out pool
/// and the real evaluation split.
pub fn generalization_curve(
    real: &DatasetSplit,
    train_pool: &[&GeneratorInstance],
    held_out: &[&GeneratorInstance],
    n_values: &[usize],
    setup: &CurveSetup,
    seed: u64,
) -> Result<GeneralizationCurve> {
    if let Some(g) = train_pool
        .iter()
        .find(|g| held_out.iter().any(|h| h.id == g.id))
    {
        return Err(Error::arg(format!(
            "generator {} is in both the training and held-out pools",
            g.id
        )));
    }
    if held_out.is_empty() {
        return Err(Error::arg("held-out pool is empty"));
    }
    if let Some(&n) = n_values.iter().find(|&&n| n == 0 || n > train_pool.len()) {
        return Err(Error::arg(format!(
            "n = {n} is outside 1..={}",
            train_pool.len()
        )));
    }
    let held: Vec<&dyn ImageSource<f32>> = held_out
        .iter()
        .map(|g| *g as &dyn ImageSource<f32>)
        .collect();
    let eval_seed = seed::derive_seed(seed, "curve-eval", 0);
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let sources = &train_pool[..n];
        let cls = train_classifier(
            real,
            sources,
            &setup.tier,
            &setup.spec,
            seed::derive_seed(seed, "curve-classifier", n as u64),
            &ClassifierSetup::new(format!("curve-n{n}"), setup.samples_per_generator),
        )?;
        let counts = accuracy_balanced(&cls, &held, &real.eval, setup.eval_samples, eval_seed)?;
        points.push(CurvePoint {
            n,
            train_ids: sources.iter().map(|g| g.id.clone()).collect(),
            accuracy: counts.accuracy(),
            counts,
        });
    }
    Ok(GeneralizationCurve {
        held_out_ids: held_out.iter().map(|g| g.id.clone()).collect(),
        points,
        seed,
    })
}
