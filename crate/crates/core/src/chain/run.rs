use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::manifest::{classifier_id, generator_id, ChainManifest};
use super::report::{emit_report, ReportKind};
use super::state::{ChainState, ClassifierRecord, IterationRecord, StageStatus, MANIFEST_COPY};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::LossVariant;
use crate::models::{
    load_checkpoint, read_meta, save_checkpoint, CapacityTier, CheckpointMeta, DigitEmbedderParams,
    ModelKind,
};
use crate::training::{
    train_classifier, train_embedder, train_gan, ClassifierInstance, ClassifierSetup, GanSetup,
    GeneratorInstance,
};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "GAPCHAIN_WORKERS";

/// A validated manifest with its dataset loaded.
pub struct ChainContext {
    pub manifest: ChainManifest,
    pub data: DatasetSplit,
}

impl ChainContext {
    pub fn new(manifest: ChainManifest) -> Result<Self> {
        manifest.validate()?;
        let data = manifest.load_data()?;
        Ok(ChainContext { manifest, data })
    }

    pub fn out(&self) -> &Path {
        &self.manifest.output_dir
    }

    pub fn workers(&self) -> usize {
        if self.manifest.workers > 0 {
            return self.manifest.workers;
        }
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers())
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
    }

    pub fn iteration_dir(&self, i: usize) -> PathBuf {
        self.out().join(IterationRecord::dir_name(i))
    }

    pub fn load_generator(&self, i: usize, id: &str) -> Result<GeneratorInstance> {
        GeneratorInstance::load(&self.iteration_dir(i), id)
    }

    pub fn load_classifier(&self, i: usize, id: &str) -> Result<ClassifierInstance> {
        ClassifierInstance::load(&self.iteration_dir(i), id)
    }

    pub fn embedder_path(&self) -> PathBuf {
        self.out().join("embedder.bin")
    }

    pub fn load_embedder(&self, state: &ChainState) -> Result<DigitEmbedderParams<f32>> {
        if state.embedder != StageStatus::Done {
            return Err(Error::dependency(
                "the Fréchet embedder has not been trained",
            ));
        }
        let path = self.embedder_path();
        let meta = read_meta(&path)?;
        let tier = meta
            .tier
            .clone()
            .ok_or_else(|| Error::integrity(&path, "missing tier"))?;
        let mut e = DigitEmbedderParams::init(meta.init_seed, tier);
        load_checkpoint(&path, &mut e)?;
        Ok(e)
    }

    /// (iteration, classifier index) pairs that iteration-`i` generators must fool.
    pub fn frozen_for(&self, i: usize) -> Vec<(usize, usize)> {
        if i == 0 {
            return Vec::new();
        }
        match self.manifest.loss.variant {
            LossVariant::Standard => Vec::new(),
            LossVariant::FoolAll => (0..i).map(|j| (j, 0)).collect(),
            LossVariant::Memoryless | LossVariant::Normalized => vec![(i - 1, 0)],
            LossVariant::MultiClassifier => (0..self.manifest.in_loss_count())
                .map(|k| (i - 1, k))
                .collect(),
        }
    }
}

fn rel(ctx: &ChainContext, p: &Path) -> PathBuf {
    p.strip_prefix(ctx.out()).unwrap_or(p).to_path_buf()
}

/// Runs both stages of iteration `i`, skipping stages already done.
pub fn run_iteration(ctx: &ChainContext, state: &mut ChainState, i: usize) -> Result<()> {
    state.iteration(i)?;
    let frozen_ids = ctx.frozen_for(i);
    for &(j, _) in &frozen_ids {
        if state.iterations[j].classifiers != StageStatus::Done {
            return Err(Error::dependency(format!(
                "iteration {i} needs the classifiers of iteration {j}, which are not trained"
            )));
        }
    }
    let m = &ctx.manifest;
    let t = m.pools.train_generators;
    let total = t + m.pools.held_out_generators;
    let dir = ctx.iteration_dir(i);

    if state.iterations[i].generators != StageStatus::Done {
        let frozen: Vec<ClassifierInstance> = frozen_ids
            .iter()
            .map(|&(j, k)| ctx.load_classifier(j, &classifier_id(j, k)))
            .collect::<Result<_>>()?;
        let frozen_refs: Vec<&ClassifierInstance> = frozen.iter().collect();
        let loss = m.loss_for(i);
        {
            let rec = &mut state.iterations[i];
            rec.generators = StageStatus::Running;
            rec.classifiers = StageStatus::Pending;
            rec.lineage = frozen.iter().map(|c| c.id.clone()).collect();
            rec.train_generator_ids = (0..t).map(|k| generator_id(i, k, t)).collect();
            rec.held_out_generator_ids = (t..total).map(|k| generator_id(i, k, t)).collect();
            rec.checkpoints.clear();
            rec.classifier_records.clear();
            rec.wall_clock_secs.clear();
        }
        state.save()?;
        let started = Instant::now();
        let pool = ctx.pool()?;
        let result: Result<Vec<(PathBuf, PathBuf)>> = pool.install(|| {
            (0..total)
                .into_par_iter()
                .map(|k| {
                    let setup = GanSetup::new(generator_id(i, k, t), m.arch);
                    let g = train_gan(
                        &ctx.data,
                        &frozen_refs,
                        &loss,
                        &m.gan,
                        m.generator_seed(i, k),
                        &setup,
                    )?;
                    g.save(&dir)
                })
                .collect()
        });
        let rec = &mut state.iterations[i];
        match result {
            Ok(paths) => {
                for (g, d) in paths {
                    rec.checkpoints.push(rel(ctx, &g));
                    rec.checkpoints.push(rel(ctx, &d));
                }
                rec.generators = StageStatus::Done;
                rec.wall_clock_secs.push(started.elapsed().as_secs_f64());
                state.save()?;
            }
            Err(e) => {
                rec.generators = StageStatus::Failed;
                state.save()?;
                return Err(e);
            }
        }
    }

    if state.iterations[i].classifiers != StageStatus::Done {
        let rec = state.iterations[i].clone();
        let train: Vec<GeneratorInstance> = rec
            .train_generator_ids
            .iter()
            .map(|id| ctx.load_generator(i, id))
            .collect::<Result<_>>()?;
        let tier = m.tier_for(i);
        state.iterations[i].classifiers = StageStatus::Running;
        state.save()?;
        let started = Instant::now();
        let pool = ctx.pool()?;
        let result: Result<Vec<(ClassifierRecord, PathBuf)>> = pool.install(|| {
            (0..m.pools.classifiers)
                .into_par_iter()
                .map(|k| train_one_classifier(ctx, &train, &tier, i, k, &dir))
                .collect()
        });
        let rec = &mut state.iterations[i];
        match result {
            Ok(items) => {
                // a rerun after an interruption replaces earlier records
                let keep = 2 * (m.pools.train_generators + m.pools.held_out_generators);
                rec.checkpoints.truncate(keep);
                rec.classifier_records.clear();
                for (r, p) in items {
                    rec.classifier_records.push(r);
                    rec.checkpoints.push(rel(ctx, &p));
                }
                rec.classifiers = StageStatus::Done;
                rec.wall_clock_secs.truncate(1);
                rec.wall_clock_secs.push(started.elapsed().as_secs_f64());
                state.save()?;
            }
            Err(e) => {
                rec.classifiers = StageStatus::Failed;
                state.save()?;
                return Err(e);
            }
        }
    }
    Ok(())
}

fn train_one_classifier(
    ctx: &ChainContext,
    train: &[GeneratorInstance],
    tier: &CapacityTier,
    i: usize,
    k: usize,
    dir: &Path,
) -> Result<(ClassifierRecord, PathBuf)> {
    let m = &ctx.manifest;
    let sources: Vec<&GeneratorInstance> = m
        .classifier_sources(k)
        .into_iter()
        .map(|s| &train[s])
        .collect();
    let setup = ClassifierSetup::new(classifier_id(i, k), m.samples_per_generator);
    let c = train_classifier(
        &ctx.data,
        &sources,
        tier,
        &m.classifier,
        m.classifier_seed(i, k),
        &setup,
    )?;
    let path = c.save(dir)?;
    Ok((
        ClassifierRecord {
            id: c.id.clone(),
            source_generator_ids: c.source_generator_ids.clone(),
            in_loss: m.is_in_loss(k),
        },
        path,
    ))
}

fn ensure_embedder(ctx: &ChainContext, state: &mut ChainState) -> Result<()> {
    let m = &ctx.manifest;
    if m.eval.frechet_samples == 0 || state.embedder == StageStatus::Done {
        return Ok(());
    }
    state.embedder = StageStatus::Running;
    state.save()?;
    let tier = CapacityTier::from_multiplier(m.eval.embedder_tier);
    let seed = m.embedder_seed();
    match train_embedder(&ctx.data, &tier, &m.eval.embedder, seed) {
        Ok(e) => {
            let path = ctx.embedder_path();
            let mut meta = CheckpointMeta::new(ModelKind::Embedder, "embedder", e.init_seed);
            meta.tier = Some(tier);
            save_checkpoint(&path, &e, meta)?;
            state.embedder_checkpoint = Some(rel(ctx, &path));
            state.embedder = StageStatus::Done;
            state.save()
        }
        Err(err) => {
            state.embedder = StageStatus::Failed;
            state.save()?;
            Err(err)
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stop once this iteration is complete.
    pub stop_after: Option<usize>,
}

/// Opens (or creates) the chain state for `ctx` and records the manifest.
pub fn open_chain(ctx: &ChainContext) -> Result<ChainState> {
    let state = ChainState::open(&ctx.manifest)?;
    let copy = ctx.out().join(MANIFEST_COPY);
    if !copy.exists() {
        // the copy is location independent; resume supplies the directory
        let mut m = ctx.manifest.clone();
        m.output_dir = PathBuf::from(".");
        m.workers = 0;
        write_atomic(&copy, m.to_toml().as_bytes())?;
    }
    state.save()?;
    Ok(state)
}

/// Runs every pending iteration, then emits the sequential report.
pub fn run_chain_with(ctx: &ChainContext, options: RunOptions) -> Result<ChainState> {
    let mut state = open_chain(ctx)?;
    ensure_embedder(ctx, &mut state)?;
    for i in 0..ctx.manifest.num_iterations {
        if !state.iterations[i].is_done() {
            run_iteration(ctx, &mut state, i)?;
        }
        if options.stop_after == Some(i) && i + 1 < ctx.manifest.num_iterations {
            return Ok(state);
        }
    }
    emit_report(ctx, &mut state, &ReportKind::SequentialMatrix)?;
    Ok(state)
}

pub fn run_chain(manifest: ChainManifest) -> Result<ChainState> {
    run_chain_with(&ChainContext::new(manifest)?, RunOptions::default())
}

/// Continues the chain stored in `output_dir` from its manifest copy.
pub fn resume(output_dir: &Path, options: RunOptions) -> Result<ChainState> {
    let mut manifest = ChainManifest::load(&output_dir.join(MANIFEST_COPY))?;
    manifest.output_dir = output_dir.to_path_buf();
    run_chain_with(&ChainContext::new(manifest)?, options)
}
