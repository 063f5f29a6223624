use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::ChainManifest;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::{read_meta, CHECKPOINT_FORMAT};

pub const STATE_FORMAT: u32 = 1;
pub const STATE_FILE: &str = "state.json";
pub const MANIFEST_COPY: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    #[default]
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRecord {
    pub id: String,
    pub source_generator_ids: Vec<String>,
    pub in_loss: bool,
}

/// Everything produced by one iteration; paths are relative to the output
/// directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub generators: StageStatus,
    pub classifiers: StageStatus,
    pub train_generator_ids: Vec<String>,
    pub held_out_generator_ids: Vec<String>,
    /// Frozen classifiers in the loss of this iteration's generators.
    pub lineage: Vec<String>,
    pub classifier_records: Vec<ClassifierRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// Seconds spent per stage (generators, classifiers).
    #[serde(default)]
    pub wall_clock_secs: Vec<f64>,
}

impl IterationRecord {
    pub fn generator_ids(&self) -> Vec<String> {
        self.train_generator_ids
            .iter()
            .chain(&self.held_out_generator_ids)
            .cloned()
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.generators == StageStatus::Done && self.classifiers == StageStatus::Done
    }

    pub fn dir_name(i: usize) -> String {
        format!("iteration-{i}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSweepRow {
    pub phi: f64,
    pub generator_id: String,
    pub in_loss_accuracy: f64,
    /// Mean accuracy of the held-out classifiers.
    pub held_out_accuracy: f64,
    pub held_out_accuracies: Vec<f64>,
    pub frechet: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSweepRecord {
    pub in_loss_classifier: String,
    pub held_out_classifiers: Vec<String>,
    pub steps: usize,
    pub rows: Vec<PhiSweepRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Persisted progress of a chain. The orchestrator is its only writer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub format_version: u32,
    pub manifest_hash: String,
    pub output_dir: PathBuf,
    pub embedder: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder_checkpoint: Option<PathBuf>,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_sweep: Option<PhiSweepRecord>,
    /// Report files written so far, relative to the output directory.
    #[serde(default)]
    pub reports: BTreeSet<PathBuf>,
}

impl ChainState {
    pub fn new(manifest: &ChainManifest) -> Self {
        ChainState {
            format_version: STATE_FORMAT,
            manifest_hash: manifest.hash(),
            output_dir: manifest.output_dir.clone(),
            embedder: StageStatus::Pending,
            embedder_checkpoint: None,
            iterations: (0..manifest.num_iterations)
                .map(|index| IterationRecord {
                    index,
                    ..Default::default()
                })
                .collect(),
            phi_sweep: None,
            reports: BTreeSet::new(),
        }
    }

    pub fn path(output_dir: &Path) -> PathBuf {
        output_dir.join(STATE_FILE)
    }

    pub fn save(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("state serializes");
        write_atomic(&Self::path(&self.output_dir), &json)
    }

    pub fn load(output_dir: &Path) -> Result<Self> {
        let path = Self::path(output_dir);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut s: ChainState = serde_json::from_slice(&text).map_err(|e| Error::Format {
            what: "chain state".into(),
            reason: e.to_string(),
        })?;
        if s.format_version != STATE_FORMAT {
            return Err(Error::integrity(
                &path,
                format!("state format {}", s.format_version),
            ));
        }
        s.output_dir = output_dir.to_path_buf();
        Ok(s)
    }

    /// Loads the state in `manifest.output_dir`, or starts a fresh one.
    /// A state written for a different manifest is a configuration error.
    pub fn open(manifest: &ChainManifest) -> Result<Self> {
        if Self::path(&manifest.output_dir).exists() {
            let s = Self::load(&manifest.output_dir)?;
            if s.manifest_hash != manifest.hash() {
                return Err(Error::config(format!(
                    "{} belongs to a different manifest",
                    manifest.output_dir.display()
                )));
            }
            Ok(s)
        } else {
            Ok(Self::new(manifest))
        }
    }

    pub fn iteration(&self, i: usize) -> Result<&IterationRecord> {
        self.iterations.get(i).ok_or_else(|| {
            Error::arg(format!(
                "iteration {i} is outside the chain ({})",
                self.iterations.len()
            ))
        })
    }

    pub fn completed_iterations(&self) -> usize {
        self.iterations.iter().take_while(|r| r.is_done()).count()
    }

    /// Every file path the state references, relative to the output directory.
    pub fn referenced_files(&self) -> BTreeSet<PathBuf> {
        let mut out = BTreeSet::new();
        out.insert(PathBuf::from(STATE_FILE));
        out.insert(PathBuf::from(MANIFEST_COPY));
        let mut add_blob = |p: &PathBuf| {
            out.insert(p.clone());
            out.insert(p.with_extension("json"));
        };
        if let Some(p) = &self.embedder_checkpoint {
            add_blob(p);
        }
        for r in &self.iterations {
            r.checkpoints.iter().for_each(&mut add_blob);
        }
        if let Some(s) = &self.phi_sweep {
            s.checkpoints.iter().for_each(&mut add_blob);
        }
        out.extend(self.reports.iter().cloned());
        out
    }

    /// Checks that referenced checkpoints exist with the current format and
    /// that no file in the output directory is unreferenced.
    pub fn verify_files(&self) -> Result<()> {
        let referenced = self.referenced_files();
        for p in &referenced {
            let full = self.output_dir.join(p);
            if !full.exists() {
                return Err(Error::integrity(
                    &full,
                    "referenced by the chain state but missing",
                ));
            }
            if p.extension().is_some_and(|e| e == "bin") {
                let meta = read_meta(&full)?;
                if meta.format_version != CHECKPOINT_FORMAT {
                    return Err(Error::integrity(&full, "checkpoint format mismatch"));
                }
            }
        }
        let mut on_disk = Vec::new();
        walk(&self.output_dir, &self.output_dir, &mut on_disk)?;
        for p in on_disk {
            if !referenced.contains(&p) {
                return Err(Error::integrity(
                    self.output_dir.join(&p),
                    "file is not reachable from the chain state",
                ));
            }
        }
        Ok(())
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}
