use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::Designation;
use super::run::ChainContext;
use super::state::{ChainState, IterationRecord, PhiSweepRecord};
use crate::data::{ImageBatch, ImageSource};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy_on_generated, cross_fooling_matrix, extract_clusters, fraction_flagged,
    frechet_from_features, generalization_curve, ClusterReport, CurveSetup, Embedder,
    FoolingMatrix, GeneralizationCurve, Scorer, FOOLED_THRESHOLD,
};
use crate::io::write_atomic;
use crate::seed::{self, derive_seed};
use crate::training::{ClassifierInstance, GeneratorInstance};

pub const REPORT_DIR: &str = "reports";

#[derive(Clone, Debug, PartialEq)]
pub enum ReportKind {
    /// Iteration-by-iteration matrix, Fréchet scores and in-loss checks.
    SequentialMatrix,
    /// Classifiers of one iteration against held-out generators of another.
    CrossMatrix {
        rows: usize,
        cols: usize,
    },
    /// Generalization curve within one iteration.
    Curve {
        iteration: usize,
        n_values: Vec<usize>,
    },
    /// Mutually-fooling clusters of the sequential matrix.
    Clusters,
    PhiSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InLossEntry {
    pub iteration: usize,
    pub generator_id: String,
    pub classifier_id: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub manifest_hash: String,
    pub master_seed: u64,
    pub eval_seed: u64,
    pub designation: Designation,
    /// Rows: classifier iterations; columns: held-out generator iterations.
    pub matrix: FoolingMatrix,
    /// Mean Fréchet distance to real images per iteration.
    pub frechet: Vec<Option<f64>>,
    pub frechet_regularized: Vec<bool>,
    pub in_loss: Vec<InLossEntry>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest_hash: &'a str,
    master_seed: u64,
    eval_seed: u64,
    kind: &'a str,
    report: &'a T,
}

fn write_pair<T: Serialize>(
    ctx: &ChainContext,
    state: &mut ChainState,
    stem: &str,
    kind: &str,
    csv: &str,
    body: &T,
) -> Result<Vec<PathBuf>> {
    let dir = ctx.out().join(REPORT_DIR);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let env = Envelope {
        manifest_hash: &state.manifest_hash,
        master_seed: ctx.manifest.master_seed,
        eval_seed: ctx.manifest.eval_seed(),
        kind,
        report: body,
    };
    let mut json = serde_json::to_string_pretty(&env).expect("report serializes");
    json.push('\n');
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&json_path, json.as_bytes())?;
    for p in [&csv_path, &json_path] {
        state.reports.insert(
            p.strip_prefix(ctx.out())
                .expect("under output")
                .to_path_buf(),
        );
    }
    state.save()?;
    Ok(vec![csv_path, json_path])
}

fn require_done(state: &ChainState, i: usize) -> Result<&IterationRecord> {
    let r = state.iteration(i)?;
    if !r.is_done() {
        return Err(Error::dependency(format!(
            "iteration {i} has not completed"
        )));
    }
    Ok(r)
}

fn load_classifiers(ctx: &ChainContext, r: &IterationRecord) -> Result<Vec<ClassifierInstance>> {
    r.classifier_records
        .iter()
        .map(|c| ctx.load_classifier(r.index, &c.id))
        .collect()
}

fn load_generators(ctx: &ChainContext, i: usize, ids: &[String]) -> Result<Vec<GeneratorInstance>> {
    ids.iter().map(|id| ctx.load_generator(i, id)).collect()
}

/// Source generators of every classifier in `lineage`.
fn lineage_sources(state: &ChainState, lineage: &[String]) -> HashSet<String> {
    state
        .iterations
        .iter()
        .flat_map(|r| &r.classifier_records)
        .filter(|c| lineage.contains(&c.id))
        .flat_map(|c| c.source_generator_ids.iter().cloned())
        .collect()
}

/// Whether classifier `c` may evaluate generators of iteration `j` without
/// sharing sources with any classifier in their loss.
fn disjoint(state: &ChainState, c: &ClassifierInstance, j: usize) -> bool {
    let lineage = &state.iterations[j].lineage;
    if lineage.contains(&c.id) {
        return false;
    }
    let used = lineage_sources(state, lineage);
    c.source_generator_ids.iter().all(|s| !used.contains(s))
}

/// Checked before every generalization evaluation.
fn assert_disjoint(state: &ChainState, c: &ClassifierInstance, j: usize) -> Result<()> {
    if disjoint(state, c, j) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "classifier {} shares training sources with the loss of iteration-{j} generators",
            c.id
        )))
    }
}

/// Generated images from `gens`, `n` in total, split as evenly as possible.
fn pooled_sample(gens: &[GeneratorInstance], n: usize, seed: u64) -> Result<ImageBatch<f32>> {
    let k = gens.len();
    let parts: Vec<ImageBatch<f32>> = gens
        .iter()
        .enumerate()
        .map(|(h, g)| {
            g.sample(
                n / k + usize::from(h < n % k),
                derive_seed(seed, "pool", h as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(ImageBatch::concat(&parts.iter().collect::<Vec<_>>()))
}

/// Seeded subset of the real evaluation split used for Fréchet scores.
pub(crate) fn real_sample(ctx: &ChainContext, n: usize) -> ImageBatch<f32> {
    let mut order: Vec<usize> = (0..ctx.data.eval.count()).collect();
    order.shuffle(&mut seed::rng(derive_seed(
        ctx.manifest.eval_seed(),
        "frechet-real",
        0,
    )));
    order.truncate(n);
    order.sort_unstable();
    ctx.data.eval.select(&order)
}

/// Non-in-loss classifiers of an iteration, or all of them if there are none.
fn evaluation_rows(r: &IterationRecord, all: Vec<ClassifierInstance>) -> Vec<ClassifierInstance> {
    let has_eval = r.classifier_records.iter().any(|c| !c.in_loss);
    all.into_iter()
        .zip(&r.classifier_records)
        .filter(|(_, rec)| !has_eval || !rec.in_loss)
        .map(|(c, _)| c)
        .collect()
}

pub fn sequential_report(ctx: &ChainContext, state: &ChainState) -> Result<SequentialReport> {
    let n = ctx.manifest.num_iterations;
    for i in 0..n {
        require_done(state, i)?;
    }
    let eval_seed = ctx.manifest.eval_seed();
    let cells = ctx.manifest.eval.samples_per_cell;
    let rows: Vec<Vec<ClassifierInstance>> = state
        .iterations
        .iter()
        .map(|r| Ok(evaluation_rows(r, load_classifiers(ctx, r)?)))
        .collect::<Result<_>>()?;
    let mut entries = vec![vec![0.0; n]; n];
    let mut std = vec![vec![0.0; n]; n];
    let mut frechet = Vec::with_capacity(n);
    let mut regularized = Vec::with_capacity(n);
    let mut in_loss = Vec::new();

    let embedder = if ctx.manifest.eval.frechet_samples > 0 {
        Some(ctx.load_embedder(state)?)
    } else {
        None
    };
    let real_features = match &embedder {
        Some(e) => Some(e.embed_images(&real_sample(ctx, ctx.manifest.eval.frechet_samples))?),
        None => None,
    };

    for j in 0..n {
        let rec = &state.iterations[j];
        let held = load_generators(ctx, j, &rec.held_out_generator_ids)?;
        let images = pooled_sample(
            &held,
            cells,
            derive_seed(eval_seed, "sequential-column", j as u64),
        )?;
        for (i, row) in rows.iter().enumerate() {
            let mut accs = Vec::with_capacity(row.len());
            for c in row {
                assert_disjoint(state, c, j)?;
                accs.push(fraction_flagged(&c.real_probabilities(&images)?));
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            entries[i][j] = mean;
            std[i][j] =
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
        }

        let all = load_generators(ctx, j, &rec.generator_ids())?;
        if let (Some(e), Some(real)) = (&embedder, &real_features) {
            let mut total = 0.0;
            let mut reg = false;
            for (k, g) in all.iter().enumerate() {
                let x = g.sample(
                    ctx.manifest.eval.frechet_samples,
                    derive_seed(eval_seed, &format!("frechet-it{j}"), k as u64),
                )?;
                let s = frechet_from_features(real, &e.embed_images(&x)?)?;
                total += s.value;
                reg |= s.regularized;
            }
            frechet.push(Some(total / all.len() as f64));
            regularized.push(reg);
        } else {
            frechet.push(None);
            regularized.push(false);
        }

        for c_id in &rec.lineage {
            let (ci, _) = parse_classifier_id(c_id)?;
            let c = ctx.load_classifier(ci, c_id)?;
            for (k, g) in all.iter().enumerate() {
                let seed = derive_seed(eval_seed, &format!("in-loss-it{j}-{c_id}"), k as u64);
                in_loss.push(InLossEntry {
                    iteration: j,
                    generator_id: g.id.clone(),
                    classifier_id: c_id.clone(),
                    accuracy: accuracy_on_generated(&c, g, cells, seed)?,
                });
            }
        }
    }
    let labels: Vec<String> = (0..n).map(|i| format!("iteration-{i}")).collect();
    let mut matrix = FoolingMatrix::from_entries(labels.clone(), labels, entries)?;
    matrix.std = Some(std);
    matrix.samples_per_cell = cells;
    matrix.seed = eval_seed;
    Ok(SequentialReport {
        manifest_hash: state.manifest_hash.clone(),
        master_seed: ctx.manifest.master_seed,
        eval_seed,
        designation: ctx.manifest.designation,
        matrix,
        frechet,
        frechet_regularized: regularized,
        in_loss,
    })
}

fn parse_classifier_id(id: &str) -> Result<(usize, usize)> {
    let bad = || Error::Format {
        what: "classifier id".into(),
        reason: id.to_string(),
    };
    let rest = id.strip_prefix("it").ok_or_else(bad)?;
    let (i, k) = rest.split_once("-c").ok_or_else(bad)?;
    Ok((i.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?))
}

fn sequential_csv(r: &SequentialReport) -> String {
    let mut out = r.matrix.to_csv();
    out.push_str("\nfrechet");
    for f in &r.frechet {
        match f {
            Some(v) => write!(out, ",{v:.6}"),
            None => write!(out, ","),
        }
        .expect("string write");
    }
    out.push('\n');
    out
}

/// Classifiers of iteration `a` (those disjoint from the loss of iteration
/// `b`) against the held-out generators of iteration `b`.
pub fn cross_report(
    ctx: &ChainContext,
    state: &ChainState,
    a: usize,
    b: usize,
) -> Result<FoolingMatrix> {
    let ra = require_done(state, a)?;
    let rb = require_done(state, b)?;
    let rows: Vec<ClassifierInstance> = load_classifiers(ctx, ra)?
        .into_iter()
        .filter(|c| disjoint(state, c, b))
        .collect();
    if rows.is_empty() {
        return Err(Error::dependency(format!(
            "no classifier of iteration {a} is disjoint from the loss of iteration {b}"
        )));
    }
    let gens = load_generators(ctx, b, &rb.held_out_generator_ids)?;
    let scorers: Vec<(&str, &dyn Scorer)> = rows
        .iter()
        .map(|c| (c.id.as_str(), c as &dyn Scorer))
        .collect();
    let sources: Vec<&dyn ImageSource<f32>> =
        gens.iter().map(|g| g as &dyn ImageSource<f32>).collect();
    let seed = derive_seed(ctx.manifest.eval_seed(), &format!("cross-{a}-{b}"), 0);
    cross_fooling_matrix(&scorers, &sources, ctx.manifest.eval.samples_per_cell, seed)
}

pub fn curve_report(
    ctx: &ChainContext,
    state: &ChainState,
    i: usize,
    n_values: &[usize],
) -> Result<GeneralizationCurve> {
    let r = require_done(state, i)?;
    let train = load_generators(ctx, i, &r.train_generator_ids)?;
    let held = load_generators(ctx, i, &r.held_out_generator_ids)?;
    let setup = CurveSetup {
        tier: ctx.manifest.tier_for(i),
        spec: ctx.manifest.classifier,
        samples_per_generator: ctx.manifest.samples_per_generator,
        eval_samples: ctx.manifest.eval.samples_per_cell,
    };
    generalization_curve(
        &ctx.data,
        &train.iter().collect::<Vec<_>>(),
        &held.iter().collect::<Vec<_>>(),
        n_values,
        &setup,
        derive_seed(ctx.manifest.eval_seed(), "curve", i as u64),
    )
}

fn phi_csv(r: &PhiSweepRecord) -> String {
    let mut out = String::from("phi,generator,in_loss_accuracy,held_out_accuracy,frechet\n");
    for row in &r.rows {
        let f = row.frechet.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{:.6},{f}",
            row.phi, row.generator_id, row.in_loss_accuracy, row.held_out_accuracy
        )
        .expect("string write");
    }
    out
}

fn clusters_csv(r: &ClusterReport) -> String {
    let mut out = String::from("cluster,members\n");
    for (k, ids) in r.cluster_ids().iter().enumerate() {
        writeln!(out, "{k},{}", ids.join(" ")).expect("string write");
    }
    if !r.unclustered.is_empty() {
        let ids: Vec<&str> = r.unclustered.iter().map(|&i| r.ids[i].as_str()).collect();
        writeln!(out, "none,{}", ids.join(" ")).expect("string write");
    }
    out
}

/// Writes the CSV and JSON files of one report kind under `reports/` and
/// registers them in the state. Identical state gives identical bytes.
pub fn emit_report(
    ctx: &ChainContext,
    state: &mut ChainState,
    kind: &ReportKind,
) -> Result<Vec<PathBuf>> {
    match kind {
        ReportKind::SequentialMatrix => {
            let r = sequential_report(ctx, state)?;
            write_pair(
                ctx,
                state,
                "sequential_matrix",
                "sequential_matrix",
                &sequential_csv(&r),
                &r,
            )
        }
        ReportKind::CrossMatrix { rows, cols } => {
            let m = cross_report(ctx, state, *rows, *cols)?;
            let stem = format!("cross_matrix-it{rows}-it{cols}");
            write_pair(ctx, state, &stem, "cross_matrix", &m.to_csv(), &m)
        }
        ReportKind::Curve {
            iteration,
            n_values,
        } => {
            let c = curve_report(ctx, state, *iteration, n_values)?;
            let stem = format!("curve-it{iteration}");
            write_pair(ctx, state, &stem, "curve", &c.to_csv(), &c)
        }
        ReportKind::Clusters => {
            let r = sequential_report(ctx, state)?;
            let mut m = r.matrix.clone();
            m.fooled_threshold = FOOLED_THRESHOLD;
            let c = extract_clusters(&m)?;
            write_pair(ctx, state, "clusters", "clusters", &clusters_csv(&c), &c)
        }
        ReportKind::PhiSweep => {
            let s = state
                .phi_sweep
                .clone()
                .ok_or_else(|| Error::dependency("no φ-sweep has been run for this chain"))?;
            write_pair(ctx, state, "phi_sweep", "phi_sweep", &phi_csv(&s), &s)
        }
    }
}
