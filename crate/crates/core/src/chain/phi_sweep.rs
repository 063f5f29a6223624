use rayon::prelude::*;

use super::report::{emit_report, real_sample, ReportKind};
use super::run::ChainContext;
use super::state::{ChainState, PhiSweepRecord, PhiSweepRow};
use crate::data::ImageSource;
use crate::error::{Error, Result};
use crate::evaluation::{accuracy_on_generated, frechet_from_features, Embedder};
use crate::losses::{LossConfig, LossVariant};
use crate::seed::derive_seed;
use crate::training::{train_gan, ClassifierInstance, GanSetup};

/// φ values of the default sweep.
pub const DEFAULT_PHIS: [f64; 4] = [1e-2, 1.0, 1e2, 1e4];

/// Trains one generator per φ with the normalized loss against the
/// designated iteration-0 classifier, then scores it with that classifier,
/// the held-out iteration-0 classifiers and the Fréchet embedder.
/// `steps` overrides the manifest GAN length.
pub fn run_phi_sweep(
    ctx: &ChainContext,
    state: &mut ChainState,
    phis: &[f64],
    steps: Option<usize>,
) -> Result<PhiSweepRecord> {
    if phis.is_empty() {
        return Err(Error::arg("φ-sweep needs at least one φ"));
    }
    let rec = state.iteration(0)?.clone();
    if !rec.is_done() {
        return Err(Error::dependency("φ-sweep needs a completed iteration 0"));
    }
    let m = &ctx.manifest;
    let in_loss: ClassifierInstance = ctx.load_classifier(0, &rec.classifier_records[0].id)?;
    let held_out: Vec<ClassifierInstance> = rec
        .classifier_records
        .iter()
        .filter(|c| {
            !c.in_loss
                && c.source_generator_ids
                    .iter()
                    .all(|s| !in_loss.source_generator_ids.contains(s))
        })
        .map(|c| ctx.load_classifier(0, &c.id))
        .collect::<Result<_>>()?;
    if held_out.is_empty() {
        return Err(Error::dependency(
            "φ-sweep needs a held-out classifier in iteration 0",
        ));
    }
    let embedder = if m.eval.frechet_samples > 0 {
        Some(ctx.load_embedder(state)?)
    } else {
        None
    };
    let mut spec = m.gan;
    if let Some(s) = steps {
        spec.steps = s;
    }
    let dir = ctx.out().join("phi_sweep");
    let eval_seed = derive_seed(m.eval_seed(), "phi-sweep", 0);
    let cells = m.eval.samples_per_cell;
    let real_features = match &embedder {
        Some(e) => Some(e.embed_images(&real_sample(ctx, m.eval.frechet_samples))?),
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers())
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let trained = pool.install(|| {
        phis.par_iter()
            .enumerate()
            .map(|(k, &phi)| {
                let loss = LossConfig::new(LossVariant::Normalized, phi)?;
                let setup = GanSetup::new(format!("phi-{k}"), m.arch);
                train_gan(
                    &ctx.data,
                    &[&in_loss],
                    &loss,
                    &spec,
                    m.phi_sweep_seed(k),
                    &setup,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(phis.len());
    let mut checkpoints = Vec::new();
    for (k, g) in trained.iter().enumerate() {
        let (gp, dp) = g.save(&dir)?;
        for p in [gp, dp] {
            checkpoints.push(
                p.strip_prefix(ctx.out())
                    .expect("under output")
                    .to_path_buf(),
            );
        }
        let seed = derive_seed(eval_seed, "row", k as u64);
        let in_loss_accuracy = accuracy_on_generated(&in_loss, g, cells, seed)?;
        let held_out_accuracies: Vec<f64> = held_out
            .iter()
            .map(|c| accuracy_on_generated(c, g, cells, seed))
            .collect::<Result<_>>()?;
        let frechet = match (&embedder, &real_features) {
            (Some(e), Some(real)) => {
                let x = g.sample(
                    m.eval.frechet_samples,
                    derive_seed(eval_seed, "frechet", k as u64),
                )?;
                Some(frechet_from_features(real, &e.embed_images(&x)?)?.value)
            }
            _ => None,
        };
        rows.push(PhiSweepRow {
            phi: phis[k],
            generator_id: g.id.clone(),
            in_loss_accuracy,
            held_out_accuracy: held_out_accuracies.iter().sum::<f64>()
                / held_out_accuracies.len() as f64,
            held_out_accuracies,
            frechet,
        });
    }
    let record = PhiSweepRecord {
        in_loss_classifier: in_loss.id.clone(),
        held_out_classifiers: held_out.iter().map(|c| c.id.clone()).collect(),
        steps: spec.steps,
        rows,
        checkpoints,
    };
    state.phi_sweep = Some(record.clone());
    state.save()?;
    emit_report(ctx, state, &ReportKind::PhiSweep)?;
    Ok(record)
}
