use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use varbench_core::attacks::AttackSpec;
use varbench_core::dataio::SynthSpec;
use varbench_core::ife::{Regime, TrainConfig};
use varbench_core::metrics::RelevanceConfig;
use varbench_core::recsys::{RecConfig, RecKind};

/// One experiment: a dataset, the defenses to train, and the attack and
/// recommender grids evaluated against each defense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub ife: IfeConfig,
    /// Empty means a clean-only baseline run.
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    pub recommenders: Vec<RecommenderConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Train the recommenders of one defense concurrently.
    #[serde(default)]
    pub parallel_cells: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_dataset_name")]
    pub name: String,
    /// Minimum user and item degree; 0 or 1 disables filtering.
    #[serde(default)]
    pub kcore: usize,
    /// Generate the data instead of reading files.
    #[serde(default)]
    pub synthetic: Option<SynthSpec>,
    /// `user_id,item_id,timestamp` CSV.
    #[serde(default)]
    pub interactions: Option<PathBuf>,
    /// Directory of `<item_id>.png`.
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// `item_id,label` CSV; needed to train a feature extractor.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_dataset_name() -> String {
    "synthetic".into()
}

fn default_channels() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfeConfig {
    #[serde(default = "default_defenses")]
    pub defenses: Vec<Regime>,
    /// Shared training settings; `eps_def` and `replays` only apply to the
    /// defended regimes.
    #[serde(default = "default_ife_training")]
    pub training: TrainConfig,
    /// Epochs for the defended regimes when they need longer than `training.epochs`.
    #[serde(default)]
    pub defended_epochs: Option<usize>,
    /// Reuse `<dir>/<regime>_s<seed>.ckpt` when present, write it otherwise.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_defenses() -> Vec<Regime> {
    vec![Regime::Traditional]
}

fn default_ife_training() -> TrainConfig {
    TrainConfig {
        eps_def: 4.0,
        replays: 4,
        ..TrainConfig::default()
    }
}

impl Default for IfeConfig {
    fn default() -> Self {
        IfeConfig {
            defenses: default_defenses(),
            training: default_ife_training(),
            defended_epochs: None,
            checkpoint_dir: None,
        }
    }
}

impl IfeConfig {
    pub fn training_for(&self, regime: Regime, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed,
            ..self.training.clone()
        };
        match regime {
            Regime::Traditional => {
                cfg.eps_def = 0.0;
                cfg.replays = 1;
            }
            Regime::AdvTrain => cfg.replays = 1,
            Regime::FreeAdvTrain => {}
        }
        if regime != Regime::Traditional {
            cfg.epochs = self.defended_epochs.unwrap_or(cfg.epochs);
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommenderConfig {
    pub kind: RecKind,
    #[serde(default)]
    pub params: RecConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub s_max: f64,
    /// Drives data generation, training, negative sampling and attacks.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// K of the clean CHR used to pick the origin and target classes.
    #[serde(default = "default_plan_k")]
    pub plan_k: usize,
    /// Accepted relative deviation of the chosen CHR ratio from 4.
    #[serde(default = "default_tolerance")]
    pub plan_tolerance: f64,
}

fn default_ks() -> Vec<usize> {
    vec![20, 50]
}

fn one() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    7
}

fn default_plan_k() -> usize {
    50
}

fn default_tolerance() -> f64 {
    0.25
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            ks: default_ks(),
            tau: 1.0,
            s_max: 1.0,
            seed: default_seed(),
            plan_k: default_plan_k(),
            plan_tolerance: default_tolerance(),
        }
    }
}

impl EvaluationConfig {
    pub fn relevance(&self) -> RelevanceConfig {
        RelevanceConfig {
            tau: self.tau,
            s_max: self.s_max,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative dataset and checkpoint paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset.interactions);
        fix(&mut self.dataset.images);
        fix(&mut self.dataset.labels);
        fix(&mut self.ife.checkpoint_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.synthetic.is_none() && (d.interactions.is_none() || d.images.is_none()) {
            bail!("dataset needs either a synthetic section or both interactions and images paths");
        }
        if d.synthetic.is_some() && (d.interactions.is_some() || d.images.is_some()) {
            bail!("dataset sets both a synthetic spec and input files");
        }
        if self.ife.defenses.is_empty() {
            bail!("ife.defenses is empty");
        }
        if self.recommenders.is_empty() {
            bail!("no recommenders configured");
        }
        let ev = &self.evaluation;
        if ev.ks.is_empty() || ev.ks.contains(&0) || ev.plan_k == 0 {
            bail!("evaluation K values must be positive and non-empty");
        }
        ev.relevance().validate()?;
        for a in &self.attacks {
            // the target is filled in from the category plan
            let probe = AttackSpec {
                target: Some(0),
                ..a.clone()
            };
            probe.validate().with_context(|| format!("attack {}", a.label()))?;
        }
        Ok(())
    }

    /// Uses one seed for every stochastic component of the run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.evaluation.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.evaluation.seed
    }

    pub fn synth_spec(&self) -> Option<SynthSpec> {
        self.dataset.synthetic.clone().map(|s| SynthSpec {
            seed: self.seed(),
            ..s
        })
    }

    pub fn rec_config(&self, rec: &RecommenderConfig) -> RecConfig {
        RecConfig {
            seed: self.seed(),
            ..rec.params.clone()
        }
    }

    pub fn max_k(&self) -> usize {
        self.evaluation
            .ks
            .iter()
            .copied()
            .chain([self.evaluation.plan_k])
            .max()
            .unwrap_or(50)
    }
}
