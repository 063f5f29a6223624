use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_corpus, synth, Corpus, DatasetSplit};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::losses::{LossConfig, LossVariant};
use crate::models::{CapacityTier, Multiplier};
use crate::seed::derive_seed;
use crate::training::{GanArch, TrainSpec};

pub const MANIFEST_FORMAT: u32 = 1;

/// Where the real images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// IDX file, directory of IDX files, or PNG tree.
    Path { path: PathBuf },
    /// Procedurally rendered digits.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub corpus: CorpusSource,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_split_ratio() -> f64 {
    0.8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSection {
    pub train_generators: usize,
    pub held_out_generators: usize,
    pub classifiers: usize,
    pub sources_per_classifier: usize,
}

impl Default for PoolSection {
    fn default() -> Self {
        PoolSection {
            train_generators: 8,
            held_out_generators: 5,
            classifiers: 4,
            sources_per_classifier: 3,
        }
    }
}

/// Rule selecting the classifier that later generators must fool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Designation {
    /// The lowest-index classifier(s) of the pool.
    #[default]
    LowestIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Generated images per matrix cell.
    pub samples_per_cell: usize,
    /// Images per side of each Fréchet comparison; 0 disables it.
    pub frechet_samples: usize,
    pub embedder_tier: Multiplier,
    pub embedder: TrainSpec,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples_per_cell: 1000,
            frechet_samples: 1000,
            embedder_tier: Multiplier::new(1, 2).expect("valid"),
            embedder: TrainSpec::new(1500, 64).with_step_size(1e-3),
        }
    }
}

/// Declarative description of a whole multi-iteration experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub num_iterations: usize,
    pub data: DataSection,
    #[serde(default)]
    pub pools: PoolSection,
    #[serde(default)]
    pub designation: Designation,
    /// Classifier tier per iteration; the last entry repeats.
    pub tiers: Vec<Multiplier>,
    pub loss: LossConfig,
    #[serde(default)]
    pub arch: GanArch,
    pub gan: TrainSpec,
    pub classifier: TrainSpec,
    pub samples_per_generator: usize,
    #[serde(default)]
    pub eval: EvalSection,
    /// Worker threads per stage; 0 defers to the environment.
    #[serde(default)]
    pub workers: usize,
}

impl ChainManifest {
    /// Desk-scale defaults around a corpus and output directory.
    pub fn desk(corpus: CorpusSource, output_dir: impl Into<PathBuf>) -> Self {
        ChainManifest {
            format_version: MANIFEST_FORMAT,
            master_seed: 0,
            output_dir: output_dir.into(),
            num_iterations: 3,
            data: DataSection {
                corpus,
                split_ratio: default_split_ratio(),
                split_seed: 0,
            },
            pools: PoolSection::default(),
            designation: Designation::LowestIndex,
            tiers: vec![Multiplier::new(1, 4).expect("valid")],
            loss: LossConfig::new(LossVariant::FoolAll, 0.001).expect("valid"),
            arch: GanArch {
                generator: crate::models::GeneratorConfig {
                    width: Multiplier::new(1, 8).expect("valid"),
                },
                discriminator: crate::models::DiscriminatorConfig {
                    width: Multiplier::new(1, 2).expect("valid"),
                },
            },
            gan: TrainSpec::new(1500, 64),
            classifier: TrainSpec::new(1500, 64).with_step_size(1e-3),
            samples_per_generator: 2000,
            eval: EvalSection::default(),
            workers: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: ChainManifest = toml::from_str(text).map_err(|e| Error::Format {
            what: "manifest".into(),
            reason: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the canonical TOML form, ignoring the output location and
    /// worker count, which do not affect results.
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.output_dir = PathBuf::new();
        m.workers = 0;
        sha256_hex(m.to_toml().as_bytes())
    }

    /// Number of classifiers per iteration that enter later generator losses.
    pub fn in_loss_count(&self) -> usize {
        match self.loss.variant {
            LossVariant::MultiClassifier => self.loss.classifier_count.unwrap_or(1),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.format_version != MANIFEST_FORMAT {
            return Err(Error::Format {
                what: "manifest".into(),
                reason: format!(
                    "format_version {}, expected {MANIFEST_FORMAT}",
                    self.format_version
                ),
            });
        }
        if self.num_iterations == 0 {
            return bad("num_iterations must be at least 1".into());
        }
        let p = &self.pools;
        if p.train_generators == 0
            || p.held_out_generators == 0
            || p.classifiers == 0
            || p.sources_per_classifier == 0
        {
            return bad("pool sizes must be positive".into());
        }
        if self.tiers.is_empty() {
            return bad("tier schedule is empty".into());
        }
        self.loss.validate()?;
        if self.num_iterations > 1 && self.loss.variant == LossVariant::Standard {
            return bad("chains longer than one iteration need a modified loss".into());
        }
        let m = self.in_loss_count();
        let s = p.sources_per_classifier;
        if m > p.classifiers {
            return bad(format!(
                "{m} in-loss classifiers but only {} per iteration",
                p.classifiers
            ));
        }
        if m * s > p.train_generators {
            return bad(format!(
                "{m} in-loss classifiers with {s} sources need {} training generators, have {}",
                m * s,
                p.train_generators
            ));
        }
        if p.classifiers > m && p.train_generators - m * s < s {
            return bad(format!(
                "evaluation classifiers need {s} generators outside the in-loss sources, only {} remain",
                p.train_generators - m * s
            ));
        }
        if self.num_iterations > 1 && p.classifiers == m {
            return bad(
                "multi-iteration chains need evaluation classifiers beyond the in-loss ones".into(),
            );
        }
        if self.samples_per_generator == 0 || self.eval.samples_per_cell == 0 {
            return bad("sample counts must be positive".into());
        }
        if self.eval.frechet_samples == 1 {
            return bad("frechet_samples must be 0 or at least 2".into());
        }
        self.gan.validate()?;
        self.classifier.validate()?;
        if self.eval.frechet_samples > 0 {
            self.eval.embedder.validate()?;
        }
        self.check_seed_uniqueness()
    }

    /// Loss used by generators of iteration `i`.
    pub fn loss_for(&self, i: usize) -> LossConfig {
        if i == 0 {
            LossConfig::standard()
        } else {
            self.loss
        }
    }

    pub fn tier_for(&self, i: usize) -> CapacityTier {
        CapacityTier::from_multiplier(self.tiers[i.min(self.tiers.len() - 1)])
    }

    /// Source generator indices (into the training pool) of classifier `k`.
    /// In-loss classifiers get disjoint leading blocks; the others take
    /// cyclic windows over the remaining generators.
    pub fn classifier_sources(&self, k: usize) -> Vec<usize> {
        let s = self.pools.sources_per_classifier;
        let m = self.in_loss_count();
        if k < m {
            return (k * s..(k + 1) * s).collect();
        }
        let rest = self.pools.train_generators - m * s;
        let start = (k - m) * s;
        (0..s).map(|o| m * s + (start + o) % rest).collect()
    }

    pub fn is_in_loss(&self, k: usize) -> bool {
        k < self.in_loss_count()
    }

    pub fn generator_seed(&self, i: usize, k: usize) -> u64 {
        derive_seed(
            self.master_seed,
            &format!("iteration-{i}/generator"),
            k as u64,
        )
    }

    pub fn classifier_seed(&self, i: usize, k: usize) -> u64 {
        derive_seed(
            self.master_seed,
            &format!("iteration-{i}/classifier"),
            k as u64,
        )
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.master_seed, "evaluation", 0)
    }

    pub fn embedder_seed(&self) -> u64 {
        derive_seed(self.master_seed, "embedder", 0)
    }

    pub fn phi_sweep_seed(&self, k: usize) -> u64 {
        derive_seed(self.master_seed, "phi-sweep", k as u64)
    }

    /// Every seed the chain will use, labelled by role.
    pub fn all_seeds(&self) -> Vec<(String, u64)> {
        let mut out = vec![
            ("evaluation".to_string(), self.eval_seed()),
            ("embedder".to_string(), self.embedder_seed()),
        ];
        let gens = self.pools.train_generators + self.pools.held_out_generators;
        for i in 0..self.num_iterations {
            for k in 0..gens {
                out.push((
                    generator_id(i, k, self.pools.train_generators),
                    self.generator_seed(i, k),
                ));
            }
            for k in 0..self.pools.classifiers {
                out.push((classifier_id(i, k), self.classifier_seed(i, k)));
            }
        }
        out
    }

    fn check_seed_uniqueness(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (role, s) in self.all_seeds() {
            if !seen.insert(s) {
                return Err(Error::config(format!("derived seed collision at {role}")));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<DatasetSplit> {
        let corpus = match &self.data.corpus {
            CorpusSource::Path { path } => load_corpus(path)?,
            CorpusSource::Synthetic { count, seed } => {
                let (px, lb) = synth::generate(*count, *seed);
                Corpus::from_raw(px, Some(lb))?
            }
        };
        DatasetSplit::from_corpus(&corpus, self.data.split_ratio, self.data.split_seed)
    }
}

/// `it{i}-g{k}` for training-pool members, `it{i}-h{k}` for held-out ones.
pub fn generator_id(i: usize, k: usize, train_pool: usize) -> String {
    if k < train_pool {
        format!("it{i}-g{k}")
    } else {
        format!("it{i}-h{}", k - train_pool)
    }
}

pub fn classifier_id(i: usize, k: usize) -> String {
    format!("it{i}-c{k}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ChainManifest {
        ChainManifest::desk(
            CorpusSource::Synthetic {
                count: 100,
                seed: 1,
            },
            "out",
        )
    }

    #[test]
    fn desk_defaults_round_trip_and_validate() {
        let m = desk();
        m.validate().unwrap();
        let back = ChainManifest::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.loss.phi, 0.001);
    }

    #[test]
    fn designated_sources_are_disjoint_from_the_rest() {
        let m = desk();
        let designated = m.classifier_sources(0);
        assert_eq!(designated, vec![0, 1, 2]);
        for k in 1..m.pools.classifiers {
            let s = m.classifier_sources(k);
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|x| !designated.contains(x) && *x < 8));
            let mut d = s.clone();
            d.dedup();
            assert_eq!(d.len(), 3);
        }
    }

    #[test]
    fn invalid_manifests() {
        let mut m = desk();
        m.format_version = 9;
        assert!(matches!(m.validate(), Err(Error::Format { .. })));
        let mut m = desk();
        m.pools.train_generators = 4;
        assert!(matches!(m.validate(), Err(Error::Configuration(_))));
        let mut m = desk();
        m.pools.classifiers = 1;
        assert!(m.validate().is_err());
        m.num_iterations = 1;
        m.validate().unwrap();
        let mut m = desk();
        m.loss = LossConfig::standard();
        assert!(m.validate().is_err());
        assert!(ChainManifest::from_toml("format_version = 1").is_err());
    }
}
