use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use varbench::config::ExperimentConfig;
use varbench::pipeline::{self, attack_origin, categories, checkpoint_path, load_dataset, obtain_ife, write_labels};
use varbench::report::emit_report;
use varbench_core::attacks::write_manifest;
use varbench_core::dataio::{read_image_dir, synthesize_dataset, write_image_dir, write_interactions, SynthSpec};
use varbench_core::ife::Classifier;
use varbench_core::recsys::{read_rankings, recommend_all, train_bpr, write_rankings, FeatureStore};

#[derive(Parser)]
#[command(name = "varbench", version, about = "Adversarial attacks against visual recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset: interactions.csv, labels.csv, images/.
    Synth(Common),
    /// Train one feature extractor per configured defense.
    TrainIfe(Common),
    /// Attack the origin-class images of one extractor toward a target class.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        origin: usize,
        #[arg(long)]
        target: usize,
    },
    /// Extract features and write top-K rankings for every recommender.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of attacked `<item_id>.png` images replacing the originals.
        #[arg(long)]
        attacked: Option<PathBuf>,
    },
    /// Compute category and accuracy metrics of a rankings file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        origin: usize,
    },
    /// Full pipeline over the configured grid.
    Run(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every unit of work succeeded.
fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Synth(common) => synth(&common),
        Command::TrainIfe(common) => train_ife(&common),
        Command::Attack {
            common,
            checkpoint,
            origin,
            target,
        } => attack(&common, &checkpoint, origin, target),
        Command::Recommend {
            common,
            checkpoint,
            attacked,
        } => recommend(&common, &checkpoint, attacked.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            rankings,
            origin,
        } => evaluate(&common, &checkpoint, &rankings, origin),
        Command::Run(common) => run(&common),
    }
}

fn synth(common: &Common) -> Result<bool> {
    let (cfg, out) = common.load()?;
    let spec = cfg.synth_spec().unwrap_or_else(|| SynthSpec {
        seed: cfg.seed(),
        ..SynthSpec::default()
    });
    let data = synthesize_dataset(&spec)?;
    write_interactions(out.join("interactions.csv"), data.dataset.interactions())?;
    write_labels(&out.join("labels.csv"), &data.images)?;
    write_image_dir(out.join("images"), &data.images)?;
    println!(
        "{} users, {} items, {} interactions written to {}",
        data.dataset.users().len(),
        data.images.len(),
        data.dataset.len(),
        out.display()
    );
    Ok(true)
}

fn train_ife(common: &Common) -> Result<bool> {
    let (mut cfg, out) = common.load()?;
    cfg.ife.checkpoint_dir = Some(out.clone());
    let data = load_dataset(&cfg)?;
    for &regime in &cfg.ife.defenses {
        obtain_ife(&cfg, &data, regime)?;
        println!("{}", checkpoint_path(&out, regime, cfg.seed()).display());
    }
    Ok(true)
}

fn attack(common: &Common, checkpoint: &Path, origin: usize, target: usize) -> Result<bool> {
    let (cfg, out) = common.load()?;
    if cfg.attacks.is_empty() {
        bail!("the config has no attacks");
    }
    let data = load_dataset(&cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    let cats = categories(&model, &data.images)?;
    let origin_set = cats
        .get(origin)
        .with_context(|| format!("the extractor has no class {origin}"))?;
    let clean = FeatureStore::extract(&model, &data.images)?;
    for spec in &cfg.attacks {
        let outcome = attack_origin(&model, &data, &clean, origin_set, target, spec, cfg.seed())?;
        let dir = out.join(spec.label());
        write_image_dir(&dir, &outcome.images)?;
        write_manifest(dir.join("manifest.csv"), &outcome.manifest)?;
        println!(
            "{}: {} images, SR {:.4}, FL {:.6} -> {}",
            spec.label(),
            outcome.images.len(),
            outcome.success_rate,
            outcome.feature_loss,
            dir.display()
        );
    }
    Ok(true)
}

fn recommend(common: &Common, checkpoint: &Path, attacked: Option<&Path>) -> Result<bool> {
    let (cfg, out) = common.load()?;
    let data = load_dataset(&cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    let mut store = FeatureStore::extract(&model, &data.images)?;
    if let Some(dir) = attacked {
        let images = read_image_dir(dir, cfg.dataset.channels)?;
        let pixels: Vec<&[f64]> = images.iter().map(|s| s.pixels()).collect();
        let feats = model.extract_many(&pixels)?;
        store = store.with_replaced(images.iter().map(|s| s.item).zip(feats))?;
        log::info!("replaced features of {} attacked items", images.len());
    }
    store.write(out.join("features.bin"))?;
    for rec in &cfg.recommenders {
        let (m, _) = train_bpr(rec.kind, &data.split, &store, &cfg.rec_config(rec))?;
        let lists = recommend_all(&m, &store, &data.split, cfg.max_k())?;
        let path = out.join(format!("rankings_{}.csv", rec.kind.name()));
        write_rankings(&path, &lists)?;
        println!("{}", path.display());
    }
    Ok(true)
}

fn evaluate(common: &Common, checkpoint: &Path, rankings: &Path, origin: usize) -> Result<bool> {
    let (cfg, out) = common.load()?;
    let data = load_dataset(&cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    let cats = categories(&model, &data.images)?;
    let origin_set = cats
        .get(origin)
        .with_context(|| format!("the extractor has no class {origin}"))?;
    let lists = read_rankings(rankings)?;
    let values = pipeline::list_metrics(&cfg, &data, &lists, origin_set, None)?;
    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for v in &values {
        w.serialize(v)?;
        println!("{}@{} = {}", v.metric, v.k, v.value);
    }
    w.flush()?;
    Ok(true)
}

fn run(common: &Common) -> Result<bool> {
    let (cfg, out) = common.load()?;
    let results = pipeline::run_experiment(&cfg)?;
    let files = emit_report(&results, &out)?;
    let failed = results.cells.iter().filter(|c| c.metrics().is_none()).count();
    println!(
        "{} cells ({failed} failed): {}, {}",
        results.cells.len(),
        files.csv.display(),
        files.markdown.display()
    );
    Ok(failed == 0)
}
