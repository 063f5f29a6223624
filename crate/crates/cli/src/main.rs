use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapchain::chain::{
    emit_report, open_chain, resume, run_chain_with, run_iteration, run_phi_sweep, ChainContext,
    ChainManifest, ChainState, ReportKind, RunOptions, DEFAULT_PHIS, MANIFEST_COPY,
};
use gapchain::data::{load_corpus, synth, Corpus, DatasetSplit, ImageSource};
use gapchain::evaluation::{cross_fooling_matrix, extract_clusters, FoolingMatrix, Scorer};
use gapchain::io::write_atomic;
use gapchain::losses::{LossConfig, LossVariant};
use gapchain::models::{CapacityTier, DiscriminatorConfig, GeneratorConfig, Multiplier};
use gapchain::training::{
    train_classifier, train_gan, ClassifierInstance, ClassifierSetup, GanArch, GanSetup,
    GeneratorInstance, TrainSpec,
};
use gapchain::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gapchain",
    version,
    about = "Sequential GAN and classifier training chains"
)]
struct Cli {
    /// Worker threads for pool training (overrides GAPCHAIN_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every pending iteration of a manifest.
    RunChain {
        manifest: PathBuf,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run one iteration of an existing chain directory.
    RunIteration { state: PathBuf, iteration: usize },
    /// Continue an interrupted chain.
    Resume {
        output_dir: PathBuf,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train standalone generators.
    TrainGans(TrainGans),
    /// Train a standalone classifier on generator checkpoints.
    TrainClassifiers(TrainClassifiers),
    /// Accuracy-on-generated matrix of classifiers against generators.
    EvalMatrix(EvalMatrix),
    /// Generalization curve for one iteration of a chain.
    EvalCurve {
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        n: Vec<usize>,
    },
    /// Normalized-loss φ-sweep against the designated iteration-0 classifier.
    PhiSweep {
        output_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        phis: Option<Vec<f64>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Mutually-fooling clusters of a square matrix JSON file or matrix report.
    Cluster {
        matrix: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit one report kind for a chain directory.
    Report {
        output_dir: PathBuf,
        #[arg(value_parser = ["sequential_matrix", "cross_matrix", "curve", "clusters", "phi_sweep"])]
        kind: String,
        #[arg(long, default_value_t = 0)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        n: Vec<usize>,
    },
    /// Write a procedurally rendered digit corpus in IDX format.
    SynthCorpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 12000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// IDX file, IDX directory or PNG tree.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<DatasetSplit> {
        let corpus: Corpus = load_corpus(&self.corpus)?;
        DatasetSplit::from_corpus(&corpus, self.split_ratio, self.split_seed)
    }
}

#[derive(Args)]
struct TrainGans {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "gan")]
    prefix: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1500)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value = "1/8")]
    gen_width: Multiplier,
    #[arg(long, default_value = "1/2")]
    disc_width: Multiplier,
    #[arg(long, default_value = "standard")]
    loss: LossVariant,
    #[arg(long, default_value_t = 0.001)]
    phi: f64,
    /// Frozen classifier checkpoints (`*.cls.bin`).
    #[arg(long, value_delimiter = ',')]
    frozen: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainClassifiers {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    id: String,
    /// Source generator checkpoints (`*.gen.bin`).
    #[arg(long, value_delimiter = ',', required = true)]
    generators: Vec<PathBuf>,
    #[arg(long, default_value = "1/4")]
    tier: Multiplier,
    #[arg(long, default_value_t = 1500)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    samples_per_generator: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalMatrix {
    #[arg(long, value_delimiter = ',', required = true)]
    classifiers: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    generators: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path stem; `.csv` and `.json` are appended.
    #[arg(long)]
    out: PathBuf,
}

/// Splits `dir/id.<suffix>` into its directory and ID.
fn split_blob(path: &Path, suffix: &str) -> Result<(PathBuf, String)> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let id = name
        .strip_suffix(suffix)
        .ok_or_else(|| Error::Argument(format!("{} does not end in {suffix}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, id.to_string()))
}

fn load_generator(path: &Path) -> Result<GeneratorInstance> {
    let (dir, id) = split_blob(path, ".gen.bin")?;
    GeneratorInstance::load(&dir, &id)
}

fn load_classifier(path: &Path) -> Result<ClassifierInstance> {
    let (dir, id) = split_blob(path, ".cls.bin")?;
    ClassifierInstance::load(&dir, &id)
}

fn chain_context(output_dir: &Path, workers: Option<usize>) -> Result<(ChainContext, ChainState)> {
    let mut manifest = ChainManifest::load(&output_dir.join(MANIFEST_COPY))?;
    manifest.output_dir = output_dir.to_path_buf();
    if let Some(w) = workers {
        manifest.workers = w;
    }
    let ctx = ChainContext::new(manifest)?;
    let state = ChainState::open(&ctx.manifest)?;
    Ok((ctx, state))
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::RunChain {
            manifest,
            stop_after,
        } => {
            let mut m = ChainManifest::load(&manifest)?;
            if let Some(w) = workers {
                m.workers = w;
            }
            let ctx = ChainContext::new(m)?;
            let state = run_chain_with(&ctx, RunOptions { stop_after })?;
            println!(
                "{} of {} iterations complete in {}",
                state.completed_iterations(),
                state.iterations.len(),
                ctx.out().display()
            );
        }
        Command::RunIteration { state, iteration } => {
            let (ctx, _) = chain_context(&state, workers)?;
            let mut st = open_chain(&ctx)?;
            run_iteration(&ctx, &mut st, iteration)?;
            println!("iteration {iteration} complete");
        }
        Command::Resume {
            output_dir,
            stop_after,
        } => {
            if let Some(w) = workers {
                std::env::set_var(gapchain::chain::WORKERS_ENV, w.to_string());
            }
            let state = resume(&output_dir, RunOptions { stop_after })?;
            println!(
                "{} of {} iterations complete",
                state.completed_iterations(),
                state.iterations.len()
            );
        }
        Command::TrainGans(a) => {
            let data = a.data.load()?;
            let frozen: Vec<ClassifierInstance> = a
                .frozen
                .iter()
                .map(|p| load_classifier(p))
                .collect::<Result<_>>()?;
            let refs: Vec<&ClassifierInstance> = frozen.iter().collect();
            let loss = match a.loss {
                LossVariant::Standard => LossConfig::standard(),
                LossVariant::MultiClassifier => LossConfig::multi(a.phi, frozen.len())?,
                v => LossConfig::new(v, a.phi)?,
            };
            let spec = TrainSpec::new(a.steps, a.batch).with_step_size(a.lr);
            let arch = GanArch {
                generator: GeneratorConfig { width: a.gen_width },
                discriminator: DiscriminatorConfig {
                    width: a.disc_width,
                },
            };
            for k in 0..a.count {
                let id = format!("{}{k}", a.prefix);
                let seed = gapchain::seed::derive_seed(a.seed, "cli-generator", k as u64);
                let g = train_gan(&data, &refs, &loss, &spec, seed, &GanSetup::new(&id, arch))?;
                let (gp, _) = g.save(&a.out)?;
                println!("{}", gp.display());
            }
        }
        Command::TrainClassifiers(a) => {
            let data = a.data.load()?;
            let gens: Vec<GeneratorInstance> = a
                .generators
                .iter()
                .map(|p| load_generator(p))
                .collect::<Result<_>>()?;
            let refs: Vec<&GeneratorInstance> = gens.iter().collect();
            let spec = TrainSpec::new(a.steps, a.batch).with_step_size(a.lr);
            let tier = CapacityTier::from_multiplier(a.tier);
            let c = train_classifier(
                &data,
                &refs,
                &tier,
                &spec,
                a.seed,
                &ClassifierSetup::new(&a.id, a.samples_per_generator),
            )?;
            println!("{}", c.save(&a.out)?.display());
        }
        Command::EvalMatrix(a) => {
            let cls: Vec<ClassifierInstance> = a
                .classifiers
                .iter()
                .map(|p| load_classifier(p))
                .collect::<Result<_>>()?;
            let gens: Vec<GeneratorInstance> = a
                .generators
                .iter()
                .map(|p| load_generator(p))
                .collect::<Result<_>>()?;
            let scorers: Vec<(&str, &dyn Scorer)> = cls
                .iter()
                .map(|c| (c.id.as_str(), c as &dyn Scorer))
                .collect();
            let sources: Vec<&dyn ImageSource<f32>> =
                gens.iter().map(|g| g as &dyn ImageSource<f32>).collect();
            let m = cross_fooling_matrix(&scorers, &sources, a.samples, a.seed)?;
            let csv = a.out.with_extension("csv");
            let json = a.out.with_extension("json");
            write_atomic(&csv, m.to_csv().as_bytes())?;
            write_atomic(&json, m.to_json().as_bytes())?;
            print!("{}", m.to_csv());
        }
        Command::EvalCurve {
            output_dir,
            iteration,
            n,
        } => {
            let (ctx, mut state) = chain_context(&output_dir, workers)?;
            print_paths(&emit_report(
                &ctx,
                &mut state,
                &ReportKind::Curve {
                    iteration,
                    n_values: n,
                },
            )?);
        }
        Command::PhiSweep {
            output_dir,
            phis,
            steps,
        } => {
            let (ctx, mut state) = chain_context(&output_dir, workers)?;
            let phis = phis.unwrap_or_else(|| DEFAULT_PHIS.to_vec());
            let r = run_phi_sweep(&ctx, &mut state, &phis, steps)?;
            for row in r.rows {
                println!(
                    "phi {:>10} in-loss {:.3} held-out {:.3} frechet {}",
                    row.phi,
                    row.in_loss_accuracy,
                    row.held_out_accuracy,
                    row.frechet.map_or("-".into(), |f| format!("{f:.3}"))
                );
            }
        }
        Command::Cluster {
            matrix,
            threshold,
            out,
        } => {
            let text = std::fs::read_to_string(&matrix).map_err(|e| Error::Io {
                path: matrix.clone(),
                source: e,
            })?;
            // report files wrap the matrix in an envelope
            let body = match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(serde_json::Value::Object(mut o)) if o.contains_key("report") => {
                    o.remove("report").expect("present").to_string()
                }
                _ => text,
            };
            let mut m = FoolingMatrix::from_json(&body)?;
            if let Some(t) = threshold {
                m.fooled_threshold = t;
            }
            let r = extract_clusters(&m)?;
            let json = serde_json::to_string_pretty(&r).expect("report serializes");
            match out {
                Some(p) => write_atomic(&p, json.as_bytes())?,
                None => println!("{json}"),
            }
        }
        Command::Report {
            output_dir,
            kind,
            rows,
            cols,
            iteration,
            n,
        } => {
            let (ctx, mut state) = chain_context(&output_dir, workers)?;
            let kind = match kind.as_str() {
                "sequential_matrix" => ReportKind::SequentialMatrix,
                "cross_matrix" => ReportKind::CrossMatrix { rows, cols },
                "curve" => ReportKind::Curve {
                    iteration,
                    n_values: n,
                },
                "clusters" => ReportKind::Clusters,
                _ => ReportKind::PhiSweep,
            };
            print_paths(&emit_report(&ctx, &mut state, &kind)?);
        }
        Command::SynthCorpus { dir, count, seed } => {
            println!("{}", synth::write_corpus(&dir, count, seed)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
