//! Generator-pool and classifier-pool training.

mod classifier;
mod embedder;
mod gan;

pub use classifier::{train_classifier, ClassifierSetup};
pub use embedder::train_embedder;
pub use gan::{
    finetune_gan, infer_iteration, train_gan, train_gan_logged, GanArch, GanSetup, StepRecord,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{sample_latents, ImageBatch, ImageSource};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::{
    load_checkpoint, read_meta, save_checkpoint, CapacityTier, CheckpointMeta, ClassifierParams,
    DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams, ModelKind,
};
use crate::nn::AdamConfig;

/// Length and optimizer settings of one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Interval, in steps, between training-log records.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

impl TrainSpec {
    pub fn new(steps: usize, batch_size: usize) -> Self {
        TrainSpec {
            steps,
            batch_size,
            optimizer: AdamConfig::default(),
            eval_every: 1,
        }
    }

    pub fn with_step_size(mut self, lr: f64) -> Self {
        self.optimizer.step_size = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("steps must be positive"));
        }
        self.validate_allow_zero_steps()
    }

    fn validate_allow_zero_steps(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::arg("eval_every must be positive"));
        }
        let o = &self.optimizer;
        if !(o.step_size > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.epsilon > 0.0)
        {
            return Err(Error::arg(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// A trained generator together with its co-trained discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInstance {
    pub id: String,
    pub params: GeneratorParams<f32>,
    pub disc_params: DiscriminatorParams<f32>,
    pub iteration: usize,
    /// IDs of the frozen classifiers in its loss.
    pub lineage: Vec<String>,
    pub loss_config: LossConfig,
    pub train_seed: u64,
    pub step_count: usize,
}

/// Latents are drawn once for the whole request, then generated in chunks.
const GEN_CHUNK: usize = 512;

impl ImageSource<f32> for GeneratorInstance {
    fn source_id(&self) -> &str {
        &self.id
    }

    fn sample(&self, n: usize, seed: u64) -> Result<ImageBatch<f32>> {
        let z = sample_latents::<f32>(seed, n)?;
        let mut parts = Vec::with_capacity(n.div_ceil(GEN_CHUNK));
        for start in (0..n).step_by(GEN_CHUNK) {
            let end = (start + GEN_CHUNK).min(n);
            let rows = z.vectors.slice(ndarray::s![start..end, ..]).to_owned();
            let (out, _) = self.params.forward_cached(&rows, false)?;
            parts.push(ImageBatch::from_feature_unchecked(out));
        }
        Ok(ImageBatch::concat(&parts.iter().collect::<Vec<_>>()))
    }
}

#[derive(Serialize, Deserialize)]
struct GeneratorExtra {
    loss_config: LossConfig,
    train_seed: u64,
    step_count: usize,
    disc_init_seed: u64,
    disc_width: crate::models::Multiplier,
}

impl GeneratorInstance {
    /// Paths of the generator and discriminator blobs inside `dir`.
    pub fn blob_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{id}.gen.bin")),
            dir.join(format!("{id}.disc.bin")),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let (g, d) = Self::blob_paths(dir, &self.id);
        let mut meta = CheckpointMeta::new(ModelKind::Generator, &self.id, self.params.init_seed);
        meta.width = Some(self.params.config.width);
        meta.iteration = Some(self.iteration);
        meta.lineage = self.lineage.clone();
        meta.extra = serde_json::to_value(GeneratorExtra {
            loss_config: self.loss_config,
            train_seed: self.train_seed,
            step_count: self.step_count,
            disc_init_seed: self.disc_params.init_seed,
            disc_width: self.disc_params.config.width,
        })
        .expect("serializable");
        save_checkpoint(&g, &self.params, meta)?;
        let mut dmeta = CheckpointMeta::new(
            ModelKind::Discriminator,
            &self.id,
            self.disc_params.init_seed,
        );
        dmeta.width = Some(self.disc_params.config.width);
        dmeta.iteration = Some(self.iteration);
        save_checkpoint(&d, &self.disc_params, dmeta)?;
        Ok((g, d))
    }

    pub fn load(dir: &Path, id: &str) -> Result<Self> {
        let (g, d) = Self::blob_paths(dir, id);
        let meta = read_meta(&g)?;
        if meta.kind != ModelKind::Generator {
            return Err(Error::integrity(
                &g,
                format!("expected a generator checkpoint, found {}", meta.kind),
            ));
        }
        let extra: GeneratorExtra = serde_json::from_value(meta.extra.clone())
            .map_err(|e| Error::integrity(&g, format!("bad generator metadata: {e}")))?;
        let width = meta
            .width
            .ok_or_else(|| Error::integrity(&g, "missing width"))?;
        let mut params = GeneratorParams::init(meta.init_seed, GeneratorConfig { width });
        load_checkpoint(&g, &mut params)?;
        let mut disc_params = DiscriminatorParams::init(
            extra.disc_init_seed,
            DiscriminatorConfig {
                width: extra.disc_width,
            },
        );
        load_checkpoint(&d, &mut disc_params)?;
        Ok(GeneratorInstance {
            id: meta.id,
            params,
            disc_params,
            iteration: meta.iteration.unwrap_or(0),
            lineage: meta.lineage,
            loss_config: extra.loss_config,
            train_seed: extra.train_seed,
            step_count: extra.step_count,
        })
    }
}

/// A trained real-vs-generated classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierInstance {
    pub id: String,
    pub params: ClassifierParams<f32>,
    pub iteration: usize,
    pub source_generator_ids: Vec<String>,
    pub tier: CapacityTier,
    pub train_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ClassifierExtra {
    source_generator_ids: Vec<String>,
    train_seed: u64,
}

impl ClassifierInstance {
    pub fn blob_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.cls.bin"))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::blob_path(dir, &self.id);
        let mut meta = CheckpointMeta::new(ModelKind::Classifier, &self.id, self.params.init_seed);
        meta.tier = Some(self.tier.clone());
        meta.iteration = Some(self.iteration);
        meta.extra = serde_json::to_value(ClassifierExtra {
            source_generator_ids: self.source_generator_ids.clone(),
            train_seed: self.train_seed,
        })
        .expect("serializable");
        save_checkpoint(&path, &self.params, meta)?;
        Ok(path)
    }

    pub fn load(dir: &Path, id: &str) -> Result<Self> {
        let path = Self::blob_path(dir, id);
        let meta = read_meta(&path)?;
        if meta.kind != ModelKind::Classifier {
            return Err(Error::integrity(
                &path,
                format!("expected a classifier checkpoint, found {}", meta.kind),
            ));
        }
        let tier = meta
            .tier
            .clone()
            .ok_or_else(|| Error::integrity(&path, "missing tier"))?;
        let extra: ClassifierExtra = serde_json::from_value(meta.extra.clone())
            .map_err(|e| Error::integrity(&path, format!("bad classifier metadata: {e}")))?;
        let mut params = ClassifierParams::init(meta.init_seed, tier.clone());
        load_checkpoint(&path, &mut params)?;
        Ok(ClassifierInstance {
            id: meta.id,
            params,
            iteration: meta.iteration.unwrap_or(0),
            source_generator_ids: extra.source_generator_ids,
            tier,
            train_seed: extra.train_seed,
        })
    }
}
