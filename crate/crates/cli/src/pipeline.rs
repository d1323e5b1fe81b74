use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use varbench_core::attacks::{attack_many, AttackJob, AttackSpec, ManifestRow};
use varbench_core::dataio::{
    kcore_filter, leave_one_out, load_interactions, quantize16, read_image_dir, synthesize_dataset, ImageSample,
    InteractionDataset, ItemId, SplitDataset,
};
use varbench_core::ife::{accuracy, train, Classifier, LabeledImages, Regime};
use varbench_core::metrics::{
    accuracy_metrics, beyond_accuracy, chr_at_k, feature_loss, ncdcg_at_k, success_rate, CategorySet,
};
use varbench_core::recsys::{recommend_all, train_bpr, FeatureStore, RankingList};

use crate::config::{ExperimentConfig, RecommenderConfig};
use crate::plan::{select_categories, CategoryPlan};
use crate::report::{CellKey, CellResult, ExperimentResults, MetricValue, CLEAN};

/// Interactions split for evaluation plus one image per catalogue item.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub split: SplitDataset,
    /// Sorted by item id, restricted to items present in the split.
    pub images: Vec<ImageSample>,
}

impl Dataset {
    pub fn catalog(&self) -> Vec<ItemId> {
        self.images.iter().map(|s| s.item).collect()
    }

    pub fn labeled(&self) -> Result<LabeledImages<f64>> {
        if self.images.iter().any(|s| s.label.is_none()) {
            bail!("training a feature extractor needs a label for every image");
        }
        Ok(LabeledImages::from_samples(&self.images)?)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let (interactions, images) = match cfg.synth_spec() {
        Some(spec) => {
            let data = synthesize_dataset(&spec)?;
            (data.dataset, data.images)
        }
        None => {
            let inter_path = d.interactions.as_ref().expect("validated");
            let img_dir = d.images.as_ref().expect("validated");
            let interactions = load_interactions(inter_path)?;
            let mut images = read_image_dir(img_dir, d.channels)?;
            if let Some(labels) = &d.labels {
                let labels = read_labels(labels)?;
                for s in &mut images {
                    s.label = labels.get(&s.item).copied();
                }
            }
            (interactions, images)
        }
    };
    let interactions = if d.kcore > 1 {
        kcore_filter(&interactions, d.kcore)
    } else {
        interactions
    };
    build_dataset(&d.name, &interactions, images)
}

fn build_dataset(name: &str, interactions: &InteractionDataset, images: Vec<ImageSample>) -> Result<Dataset> {
    let split = leave_one_out(interactions)?;
    let items = split.items();
    let images: Vec<ImageSample> = images.into_iter().filter(|s| items.contains(&s.item)).collect();
    let have: BTreeSet<ItemId> = images.iter().map(|s| s.item).collect();
    if let Some(missing) = items.iter().find(|i| !have.contains(i)) {
        bail!("item {missing} has interactions but no image");
    }
    Ok(Dataset {
        name: name.to_string(),
        split,
        images,
    })
}

/// Reads `item_id,label` rows.
pub fn read_labels(path: &Path) -> Result<BTreeMap<ItemId, usize>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<(ItemId, usize)>() {
        let (item, label) = row.with_context(|| format!("reading {}", path.display()))?;
        out.insert(item, label);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, images: &[ImageSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["item_id", "label"])?;
    for s in images {
        if let Some(label) = s.label {
            w.write_record([s.item.to_string(), label.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_path(dir: &Path, regime: Regime, seed: u64) -> PathBuf {
    dir.join(format!("{}_s{seed}.ckpt", regime.name()))
}

/// Loads the cached extractor for `regime` or trains (and caches) it.
pub fn obtain_ife(cfg: &ExperimentConfig, data: &Dataset, regime: Regime) -> Result<Classifier<f64>> {
    let seed = cfg.seed();
    let cached = cfg.ife.checkpoint_dir.as_ref().map(|d| checkpoint_path(d, regime, seed));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        let model = Classifier::load(path)?;
        if model.regime() != regime {
            bail!("{} holds a {} model, expected {}", path.display(), model.regime().name(), regime.name());
        }
        log::info!("loaded {} extractor from {}", regime.name(), path.display());
        return Ok(model);
    }
    let labeled = data.labeled()?;
    let tcfg = cfg.ife.training_for(regime, seed);
    let started = std::time::Instant::now();
    let (model, report) = train(&labeled, &tcfg, regime)?;
    log::info!(
        "trained {} extractor: {} epochs, train accuracy {:.3}, {:.1?}",
        regime.name(),
        report.epochs_run,
        accuracy(&model, &labeled)?,
        started.elapsed()
    );
    if let Some(path) = cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        model.save(&path)?;
    }
    Ok(model)
}

/// Category sets from the extractor's predictions on clean images.
pub fn categories(model: &Classifier<f64>, images: &[ImageSample]) -> Result<Vec<CategorySet>> {
    let pixels: Vec<&[f64]> = images.iter().map(|s| s.pixels()).collect();
    let preds = model.predict_many(&pixels)?;
    let num_classes = model.architecture().num_classes;
    Ok((0..num_classes)
        .map(|c| CategorySet::from_predictions(c, images.iter().map(|s| s.item).zip(preds.iter().copied())))
        .collect())
}

/// Origin-class images pushed toward the plan's target and their features.
#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub images: Vec<ImageSample>,
    pub store: FeatureStore,
    pub manifest: Vec<ManifestRow>,
    pub success_rate: f64,
    pub feature_loss: f64,
}

pub fn attack_origin(
    model: &Classifier<f64>,
    data: &Dataset,
    clean: &FeatureStore,
    origin: &CategorySet,
    target: usize,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AttackOutcome> {
    let spec = spec.clone().targeted(target).with_seed(seed);
    let victims: Vec<&ImageSample> = data.images.iter().filter(|s| origin.contains(s.item)).collect();
    if victims.is_empty() {
        bail!("origin class {} has no items", origin.class);
    }
    let jobs: Vec<AttackJob<f64>> = victims
        .iter()
        .map(|s| AttackJob {
            item: s.item,
            pixels: s.pixels(),
            label: origin.class,
        })
        .collect();
    let results = attack_many(model, &jobs, &spec)?;
    let attacked: Vec<_> = results.iter().map(|r| r.1.clone()).collect();
    let sr = success_rate(&attacked, target)?;
    let manifest = results.iter().map(|(item, r)| ManifestRow::new(*item, &spec, r)).collect();
    // features come from the image as it would be stored on disk
    let images = results
        .iter()
        .zip(&victims)
        .map(|((item, r), s)| ImageSample::new(*item, s.shape(), quantize16(&r.perturbed), s.label))
        .collect::<varbench_core::Result<Vec<_>>>()?;
    let pixels: Vec<&[f64]> = images.iter().map(|s| s.pixels()).collect();
    let feats = model.extract_many(&pixels)?;
    let store = clean.with_replaced(images.iter().map(|s| s.item).zip(feats))?;
    let items: Vec<ItemId> = images.iter().map(|s| s.item).collect();
    let fl = feature_loss(clean, &store, &items)?;
    Ok(AttackOutcome {
        images,
        store,
        manifest,
        success_rate: sr,
        feature_loss: fl,
    })
}

/// Metric names in report order. The last two only exist for attack cells.
pub const METRICS: [&str; 10] = ["chr", "chr_pct", "ncdcg", "recall", "ndcg", "icov", "gini", "efd", "sr", "fl"];

pub fn list_metrics(
    cfg: &ExperimentConfig,
    data: &Dataset,
    lists: &[RankingList],
    origin: &CategorySet,
    attack: Option<&AttackOutcome>,
) -> Result<Vec<MetricValue>> {
    let catalog = data.catalog();
    let rc = cfg.evaluation.relevance();
    let mut out = Vec::new();
    for &k in &cfg.evaluation.ks {
        let chr = chr_at_k(lists, origin, k)?.mean;
        let ncdcg = ncdcg_at_k(lists, origin, k, &rc)?.mean;
        let acc = accuracy_metrics(lists, &data.split, k)?;
        let beyond = beyond_accuracy(lists, &data.split, &catalog, k)?;
        let mut values = vec![
            chr,
            chr * 100.0,
            ncdcg,
            acc.recall,
            acc.ndcg,
            beyond.icov as f64,
            beyond.gini,
            beyond.efd,
        ];
        if let Some(a) = attack {
            values.extend([a.success_rate, a.feature_loss]);
        }
        out.extend(METRICS.iter().zip(values).map(|(&metric, value)| MetricValue {
            metric: metric.to_string(),
            k,
            value,
        }));
    }
    Ok(out)
}

fn train_and_rank(cfg: &ExperimentConfig, data: &Dataset, rec: &RecommenderConfig, store: &FeatureStore) -> Result<Vec<RankingList>> {
    let (model, _) = train_bpr(rec.kind, &data.split, store, &cfg.rec_config(rec))?;
    Ok(recommend_all(&model, store, &data.split, cfg.max_k())?)
}

/// Clean side of one defense: extractor, features and categories.
struct DefenseState {
    regime: Regime,
    model: Classifier<f64>,
    clean: FeatureStore,
    cats: Vec<CategorySet>,
}

fn prepare_defense(cfg: &ExperimentConfig, data: &Dataset, regime: Regime) -> Result<DefenseState> {
    let model = obtain_ife(cfg, data, regime)?;
    let clean = FeatureStore::extract(&model, &data.images)?;
    let cats = categories(&model, &data.images)?;
    Ok(DefenseState {
        regime,
        model,
        clean,
        cats,
    })
}

/// Runs the full defense x attack x recommender grid. Stage failures mark
/// the affected cells as failed; the remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let data = load_dataset(cfg)?;
    log::info!(
        "dataset {}: {} users, {} items, {} train interactions",
        data.name,
        data.split.users().len(),
        data.images.len(),
        data.split.train.len()
    );
    let seed = cfg.seed();
    let mut results = ExperimentResults::default();
    let key = |rec: &RecommenderConfig, regime: Regime, attack: &str| CellKey {
        dataset: data.name.clone(),
        recommender: rec.kind.name().to_string(),
        defense: regime.name().to_string(),
        attack: attack.to_string(),
    };
    let attack_labels: Vec<String> = cfg.attacks.iter().map(|a| a.label()).collect();

    for (d_idx, &regime) in cfg.ife.defenses.iter().enumerate() {
        let state = match prepare_defense(cfg, &data, regime) {
            Ok(s) => s,
            Err(e) => {
                log::error!("{} extractor failed: {e:#}", regime.name());
                for rec in &cfg.recommenders {
                    for label in std::iter::once(CLEAN).chain(attack_labels.iter().map(String::as_str)) {
                        results.cells.push(CellResult::failed(key(rec, regime, label), &e));
                    }
                }
                continue;
            }
        };

        let clean_lists: Vec<Result<Vec<RankingList>>> = map_cells(cfg, &cfg.recommenders, |rec| {
            train_and_rank(cfg, &data, rec, &state.clean)
        });

        // the plan comes from the first defense and first recommender
        if d_idx == 0 {
            results.plan = match &clean_lists[0] {
                Ok(lists) => match select_categories(lists, &state.cats, cfg.evaluation.plan_k, cfg.evaluation.plan_tolerance) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        log::error!("category selection failed: {e:#}");
                        None
                    }
                },
                Err(_) => None,
            };
            if let Some(p) = &results.plan {
                log::info!(
                    "category plan: origin {} (CHR@{} {:.4}) -> target {} ({:.4}), ratio {:.2}",
                    p.origin,
                    cfg.evaluation.plan_k,
                    p.origin_chr,
                    p.target,
                    p.target_chr,
                    p.ratio()
                );
            }
        }
        let plan: Result<&CategoryPlan> = results.plan.as_ref().ok_or_else(|| anyhow!("no category plan"));

        for (rec, lists) in cfg.recommenders.iter().zip(&clean_lists) {
            let cell = (|| -> Result<Vec<MetricValue>> {
                let plan = plan.as_ref().map_err(|e| anyhow!("{e}"))?;
                let lists = lists.as_ref().map_err(|e| anyhow!("clean training failed: {e:#}"))?;
                list_metrics(cfg, &data, lists, origin_set(&state, plan)?, None)
            })();
            results.cells.push(CellResult::from_result(key(rec, regime, CLEAN), cell));
        }

        for (spec, label) in cfg.attacks.iter().zip(&attack_labels) {
            let outcome = plan
                .as_ref()
                .map_err(|e| anyhow!("{e}"))
                .and_then(|p| {
                    attack_origin(&state.model, &data, &state.clean, origin_set(&state, p)?, p.target, spec, seed)
                })
                .with_context(|| format!("{label} on {}", state.regime.name()));
            if let Ok(o) = &outcome {
                log::info!(
                    "{label} on {}: SR {:.3}, FL {:.4}",
                    state.regime.name(),
                    o.success_rate,
                    o.feature_loss
                );
            }
            let cells = map_cells(cfg, &cfg.recommenders, |rec| -> Result<Vec<MetricValue>> {
                let outcome = outcome.as_ref().map_err(|e| anyhow!("{e:#}"))?;
                let plan = plan.as_ref().map_err(|e| anyhow!("{e}"))?;
                let lists = train_and_rank(cfg, &data, rec, &outcome.store)?;
                list_metrics(cfg, &data, &lists, origin_set(&state, plan)?, Some(outcome))
            });
            for (rec, cell) in cfg.recommenders.iter().zip(cells) {
                results.cells.push(CellResult::from_result(key(rec, regime, label), cell));
            }
        }
    }
    Ok(results)
}

fn origin_set<'a>(state: &'a DefenseState, plan: &CategoryPlan) -> Result<&'a CategorySet> {
    state
        .cats
        .get(plan.origin)
        .ok_or_else(|| anyhow!("origin class {} not predicted by the {} extractor", plan.origin, state.regime.name()))
}

fn map_cells<T: Send, F>(cfg: &ExperimentConfig, recs: &[RecommenderConfig], f: F) -> Vec<Result<T>>
where
    F: Fn(&RecommenderConfig) -> Result<T> + Sync,
{
    if cfg.parallel_cells {
        recs.par_iter().map(&f).collect()
    } else {
        recs.iter().map(f).collect()
    }
}
