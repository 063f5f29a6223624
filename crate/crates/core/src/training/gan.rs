use std::io::Write as _;
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ClassifierInstance, GeneratorInstance, TrainSpec};
use crate::data::{sample_latents, DatasetSplit};
use crate::error::{Error, Result};
use crate::losses::{disc_loss_grad, generator_loss, prob_grad_to_logit, LossConfig, LossVariant};
use crate::models::{
    clamp_probability, Detector, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig,
    GeneratorParams,
};
use crate::nn::{sigmoid, Adam};
use crate::seed;

/// Consecutive non-finite steps tolerated before training is aborted.
pub const DIVERGENCE_PATIENCE: usize = 10;

/// Generator and discriminator widths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanArch {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
}

/// Identity and side outputs of a GAN training run.
#[derive(Clone, Debug, Default)]
pub struct GanSetup {
    pub id: String,
    pub arch: GanArch,
    /// Line-delimited JSON training log.
    pub log_path: Option<PathBuf>,
}

impl GanSetup {
    pub fn new(id: impl Into<String>, arch: GanArch) -> Self {
        GanSetup {
            id: id.into(),
            arch,
            log_path: None,
        }
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
    /// Mean `-log d` on generated samples.
    pub adversarial: f64,
    /// Mean `-log c_k` per frozen classifier.
    pub classifier_terms: Vec<f64>,
}

/// Iteration index implied by the frozen classifiers of a generator loss.
pub fn infer_iteration(config: &LossConfig, frozen: &[&ClassifierInstance]) -> Result<usize> {
    config.validate()?;
    if frozen.is_empty() {
        if config.variant != LossVariant::Standard {
            return Err(Error::config(format!(
                "{} loss needs frozen classifiers",
                config.variant
            )));
        }
        return Ok(0);
    }
    let iteration = match config.variant {
        LossVariant::Standard => {
            return Err(Error::config("standard loss takes no frozen classifiers"));
        }
        LossVariant::FoolAll => {
            let mut its: Vec<usize> = frozen.iter().map(|c| c.iteration).collect();
            its.sort_unstable();
            if its != (0..frozen.len()).collect::<Vec<_>>() {
                return Err(Error::config(format!(
                    "fool_all needs one classifier from each preceding iteration, got iterations {its:?}"
                )));
            }
            frozen.len()
        }
        _ => {
            let it = frozen[0].iteration;
            if frozen.iter().any(|c| c.iteration != it) {
                return Err(Error::config(format!(
                    "{} classifiers must share one iteration",
                    config.variant
                )));
            }
            it + 1
        }
    };
    config.check(iteration, frozen.len())?;
    Ok(iteration)
}

struct GanState {
    gen: GeneratorParams<f32>,
    disc: DiscriminatorParams<f32>,
}

fn mean_neg_log(p: &[f32]) -> f64 {
    p.iter().map(|&v| -(v as f64).ln()).sum::<f64>() / p.len() as f64
}

fn probs(logits: &ndarray::Array1<f32>) -> Vec<f32> {
    logits
        .iter()
        .map(|&l| clamp_probability(sigmoid(l)))
        .collect()
}

fn run(
    state: &mut GanState,
    data: &DatasetSplit,
    frozen: &[&ClassifierInstance],
    loss_config: &LossConfig,
    iteration: usize,
    spec: &TrainSpec,
    seed: u64,
    setup: &GanSetup,
) -> Result<Vec<StepRecord>> {
    if data.train.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    let mut log_file = match &setup.log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            Some(std::io::BufWriter::new(
                std::fs::File::create(p).map_err(|e| Error::io(p, e))?,
            ))
        }
        None => None,
    };
    let mut g_opt = Adam::new(spec.optimizer, &state.gen);
    let mut d_opt = Adam::new(spec.optimizer, &state.disc);
    let mut batch_rng = seed::rng(seed::derive_seed(seed, "gan-real-batches", 0));
    let n = spec.batch_size;
    let mut records = Vec::new();
    let mut bad_streak = 0;

    for step in 0..spec.steps {
        let idx: Vec<usize> = (0..n)
            .map(|_| batch_rng.gen_range(0..data.train.count()))
            .collect();
        let real = data.train.select(&idx).to_feature();
        let z = sample_latents::<f32>(seed::derive_seed(seed, "gan-latents", step as u64), n)?;
        let (fake, g_cache) = state.gen.forward_cached(&z.vectors, true)?;

        // discriminator step
        let (lr, cr) = state.disc.forward_logits(&real);
        let (lf, cf) = state.disc.forward_logits(&fake);
        let (pr, pf) = (probs(&lr), probs(&lf));
        let (dloss, gr, gf) = disc_loss_grad(&pr, &pf);
        let d_finite = dloss.is_finite();
        if d_finite {
            let mut d_grads = state.disc.zeros_like();
            state
                .disc
                .backward_logits(&cr, &prob_grad_to_logit(&pr, &gr), Some(&mut d_grads));
            state
                .disc
                .backward_logits(&cf, &prob_grad_to_logit(&pf, &gf), Some(&mut d_grads));
            d_opt.step(&mut state.disc, &d_grads);
        }

        // generator step against the updated discriminator and frozen classifiers
        let (lf, cf) = state.disc.forward_logits(&fake);
        let pd = probs(&lf);
        let mut c_out = Vec::with_capacity(frozen.len());
        for c in frozen {
            let (l, cache) = c.params.forward_logits(&fake);
            c_out.push((probs(&l), cache));
        }
        let c_probs: Vec<&[f32]> = c_out.iter().map(|(p, _)| p.as_slice()).collect();
        let lg = generator_loss(loss_config, iteration, &pd, &c_probs)?;
        let g_finite = lg.loss.is_finite();
        if g_finite {
            let mut d_image: Array2<f32> =
                state
                    .disc
                    .backward_logits(&cf, &prob_grad_to_logit(&pd, &lg.d_grad), None);
            for ((c, (p, cache)), grad) in frozen.iter().zip(&c_out).zip(&lg.c_grads) {
                d_image += &c
                    .params
                    .backward_logits(cache, &prob_grad_to_logit(p, grad), None);
            }
            let mut g_grads = state.gen.zeros_like();
            state.gen.backward(&g_cache, &d_image, &mut g_grads);
            g_opt.step(&mut state.gen, &g_grads);
            state.gen.commit_batch_stats(&g_cache);
        }

        if d_finite && g_finite {
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    step,
                    detail: format!(
                        "non-finite loss for {bad_streak} consecutive steps (disc {dloss}, gen {})",
                        lg.loss
                    ),
                });
            }
        }

        if step % spec.eval_every == 0 || step + 1 == spec.steps {
            let rec = StepRecord {
                step,
                disc_loss: dloss as f64,
                gen_loss: lg.loss as f64,
                adversarial: mean_neg_log(&pd),
                classifier_terms: c_probs.iter().map(|p| mean_neg_log(p)).collect(),
            };
            if let Some(f) = log_file.as_mut() {
                let line = serde_json::to_string(&rec).expect("serializable");
                writeln!(f, "{line}")
                    .map_err(|e| Error::io(setup.log_path.clone().unwrap_or_default(), e))?;
            }
            records.push(rec);
        }
    }
    if let Some(mut f) = log_file {
        f.flush()
            .map_err(|e| Error::io(setup.log_path.clone().unwrap_or_default(), e))?;
    }
    Ok(records)
}

/// Trains a fresh generator/discriminator pair. Frozen classifiers only
/// contribute input gradients; their weights are never touched.
pub fn train_gan(
    data: &DatasetSplit,
    frozen: &[&ClassifierInstance],
    loss_config: &LossConfig,
    spec: &TrainSpec,
    seed: u64,
    setup: &GanSetup,
) -> Result<GeneratorInstance> {
    train_gan_logged(data, frozen, loss_config, spec, seed, setup).map(|(g, _)| g)
}

pub fn train_gan_logged(
    data: &DatasetSplit,
    frozen: &[&ClassifierInstance],
    loss_config: &LossConfig,
    spec: &TrainSpec,
    seed: u64,
    setup: &GanSetup,
) -> Result<(GeneratorInstance, Vec<StepRecord>)> {
    spec.validate()?;
    let iteration = infer_iteration(loss_config, frozen)?;
    let mut state = GanState {
        gen: GeneratorParams::init(
            seed::derive_seed(seed, "generator", 0),
            setup.arch.generator,
        ),
        disc: DiscriminatorParams::init(
            seed::derive_seed(seed, "discriminator", 0),
            setup.arch.discriminator,
        ),
    };
    let records = run(
        &mut state,
        data,
        frozen,
        loss_config,
        iteration,
        spec,
        seed,
        setup,
    )?;
    Ok((
        GeneratorInstance {
            id: setup.id.clone(),
            params: state.gen,
            disc_params: state.disc,
            iteration,
            lineage: frozen.iter().map(|c| c.id.clone()).collect(),
            loss_config: *loss_config,
            train_seed: seed,
            step_count: spec.steps,
        },
        records,
    ))
}

/// Continues training `base` with a modified loss. Zero steps returns the
/// base weights unchanged.
pub fn finetune_gan(
    data: &DatasetSplit,
    base: &GeneratorInstance,
    frozen: &[&ClassifierInstance],
    loss_config: &LossConfig,
    spec: &TrainSpec,
    seed: u64,
    id: &str,
) -> Result<GeneratorInstance> {
    spec.validate_allow_zero_steps()?;
    if loss_config.variant == LossVariant::Standard {
        return Err(Error::config(
            "finetuning needs a modified (non-standard) loss",
        ));
    }
    let iteration = infer_iteration(loss_config, frozen)?;
    let mut state = GanState {
        gen: base.params.clone(),
        disc: base.disc_params.clone(),
    };
    if spec.steps > 0 {
        let setup = GanSetup {
            id: id.to_string(),
            arch: GanArch {
                generator: base.params.config,
                discriminator: base.disc_params.config,
            },
            log_path: None,
        };
        run(
            &mut state,
            data,
            frozen,
            loss_config,
            iteration,
            spec,
            seed,
            &setup,
        )?;
    }
    let mut lineage = base.lineage.clone();
    for c in frozen {
        if !lineage.contains(&c.id) {
            lineage.push(c.id.clone());
        }
    }
    Ok(GeneratorInstance {
        id: id.to_string(),
        params: state.gen,
        disc_params: state.disc,
        iteration,
        lineage,
        loss_config: *loss_config,
        train_seed: seed,
        step_count: base.step_count + spec.steps,
    })
}
