use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, Classifier, LogitModel, Regime};
use crate::attacks::pgd_batch_untargeted;
use crate::dataio::{ImageSample, ImageShape};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scalar::{clamp, sign, Scalar};
use crate::tensor::Graph;

/// Labelled images packed into one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages<T> {
    pub shape: ImageShape,
    pub pixels: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledImages<T> {
    pub fn new(shape: ImageShape, pixels: Vec<T>, labels: Vec<usize>) -> Result<Self> {
        if pixels.len() != shape.numel() * labels.len() {
            return Err(Error::shape(
                "labeled images",
                format!("{} pixels for {} images of {} values", pixels.len(), labels.len(), shape.numel()),
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(Error::InvalidArgument(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(LabeledImages { shape, pixels, labels })
    }

    /// Packs samples that carry a label; unlabelled samples are an error.
    pub fn from_samples(samples: &[ImageSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidArgument("no images".into()))?;
        let shape = first.shape();
        let mut pixels = Vec::with_capacity(samples.len() * shape.numel());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.shape() != shape {
                return Err(Error::shape("labeled images", format!("item {} has shape {:?}", s.item, s.shape())));
            }
            let label = s
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("item {} has no label", s.item)))?;
            pixels.extend(s.pixels().iter().map(|&p| T::lit(p)));
            labels.push(label);
        }
        Self::new(shape, pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[T] {
        let n = self.shape.numel();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    fn distinct_labels(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Splits off every `k`-th image (by position) as a held-out slice.
    pub fn split_every(&self, k: usize) -> (Self, Self) {
        let mut train = (Vec::new(), Vec::new());
        let mut held = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            let dst = if k > 0 && i % k == k - 1 { &mut held } else { &mut train };
            dst.0.extend_from_slice(self.image(i));
            dst.1.push(self.labels[i]);
        }
        let make = |(p, l)| LabeledImages {
            shape: self.shape,
            pixels: p,
            labels: l,
        };
        (make(train), make(held))
    }
}

fn default_epochs() -> usize {
    60
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    3e-3
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_replays() -> usize {
    1
}
fn default_attack_steps() -> usize {
    7
}
fn default_feature_dim() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Defence budget in 1/255 pixel units.
    #[serde(default)]
    pub eps_def: f64,
    /// Minibatch replays for free adversarial training.
    #[serde(default = "default_replays")]
    pub replays: usize,
    /// Inner PGD steps for adversarial training.
    #[serde(default = "default_attack_steps")]
    pub attack_steps: usize,
    /// Inner PGD step in 1/255 units; defaults to `eps_def / 4`.
    #[serde(default)]
    pub attack_step_size: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: default_optimizer(),
            seed: 0,
            feature_dim: default_feature_dim(),
            eps_def: 0.0,
            replays: default_replays(),
            attack_steps: default_attack_steps(),
            attack_step_size: None,
        }
    }
}

impl TrainConfig {
    /// Epochs actually run: `ceil(epochs / replays)` for the free regime.
    pub fn effective_epochs(&self, regime: Regime) -> usize {
        match regime {
            Regime::FreeAdvTrain => self.epochs.div_ceil(self.replays.max(1)),
            _ => self.epochs,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("epochs, batch_size and feature_dim must be positive".into()));
        }
        if !(self.eps_def >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps_def must be >= 0, got {}", self.eps_def)));
        }
        if self.replays == 0 {
            return Err(Error::InvalidArgument("replays must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub epochs_run: usize,
    pub batches: usize,
    pub backward_calls: usize,
}

pub fn train_standard<T: Scalar>(data: &LabeledImages<T>, cfg: &TrainConfig) -> Result<(Classifier<T>, TrainReport)> {
    train(data, cfg, Regime::Traditional)
}

/// Every minibatch is replaced by its untargeted PGD version before the update.
pub fn train_adversarial<T: Scalar>(
    data: &LabeledImages<T>,
    cfg: &TrainConfig,
) -> Result<(Classifier<T>, TrainReport)> {
    train(data, cfg, Regime::AdvTrain)
}

/// Each minibatch is replayed `replays` times; every replay runs one backward
/// pass that updates both the weights and a perturbation shared across
/// minibatches.
pub fn train_free<T: Scalar>(data: &LabeledImages<T>, cfg: &TrainConfig) -> Result<(Classifier<T>, TrainReport)> {
    train(data, cfg, Regime::FreeAdvTrain)
}

pub fn train<T: Scalar>(
    data: &LabeledImages<T>,
    cfg: &TrainConfig,
    regime: Regime,
) -> Result<(Classifier<T>, TrainReport)> {
    cfg.validate()?;
    if data.distinct_labels() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 classes, got {}",
            data.distinct_labels()
        )));
    }
    let arch = Architecture::new(data.shape, data.num_classes()).with_feature_dim(cfg.feature_dim);
    let mut model = Classifier::new(arch, cfg.seed)?;
    model.meta.regime = regime;
    model.meta.eps_def = if regime == Regime::Traditional { 0.0 } else { cfg.eps_def };
    model.meta.replays = if regime == Regime::FreeAdvTrain { cfg.replays } else { 1 };

    let mut opt = Optimizer::new(cfg.optimizer, crate::optim::Hyper::with_lr(T::lit(cfg.learning_rate)))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut attack_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    attack_rng.set_stream(2);

    let eps = T::lit(cfg.eps_def / 255.0);
    let alpha = T::lit(cfg.attack_step_size.unwrap_or(cfg.eps_def / 4.0) / 255.0);
    let numel = data.shape.numel();
    let replays = if regime == Regime::FreeAdvTrain { cfg.replays } else { 1 };
    let mut delta = vec![T::zero(); cfg.batch_size.min(data.len()) * numel];

    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.effective_epochs(regime) {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = Vec::with_capacity(chunk.len() * numel);
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend_from_slice(data.image(i));
                y.push(data.labels[i]);
            }
            if regime == Regime::AdvTrain && cfg.eps_def > 0.0 {
                x = pgd_batch_untargeted(&model, &x, &y, eps, alpha, cfg.attack_steps, &mut attack_rng)?;
            }
            for _ in 0..replays {
                let input = if regime == Regime::FreeAdvTrain {
                    x.iter()
                        .zip(&delta)
                        .map(|(&v, &d)| clamp(v + d, T::zero(), T::one()))
                        .collect()
                } else {
                    x.clone()
                };
                let (loss, input_grad) = step(&mut model, &mut opt, input, &y, regime == Regime::FreeAdvTrain)?;
                report.backward_calls += 1;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_idx,
                        loss,
                    });
                }
                loss_sum += loss;
                loss_count += 1;
                if let Some(gx) = input_grad {
                    for (d, g) in delta.iter_mut().zip(gx) {
                        *d = clamp(*d + eps * sign(g), -eps, eps);
                    }
                }
            }
            report.batches += 1;
        }
        report.epoch_losses.push(loss_sum / loss_count as f64);
        report.epochs_run += 1;
        log::debug!("{} epoch {epoch}: loss {:.4}", regime.name(), loss_sum / loss_count as f64);
    }
    Ok((model, report))
}

/// One forward/backward pass and parameter update. Returns the loss and,
/// when requested, the gradient w.r.t. the input batch.
fn step<T: Scalar>(
    model: &mut Classifier<T>,
    opt: &mut Optimizer<T>,
    x: Vec<T>,
    y: &[usize],
    want_input_grad: bool,
) -> Result<(f64, Option<Vec<T>>)> {
    let mut g = Graph::new();
    let batch = model.batch_tensor(x)?;
    let input = if want_input_grad { g.input(batch) } else { g.constant(batch) };
    let fwd = model.forward(&mut g, input, true)?;
    let loss = g.softmax_cross_entropy(fwd.logits, y)?;
    let loss_value = g.value(loss).item().as_f64();
    if !loss_value.is_finite() {
        return Ok((loss_value, None));
    }
    g.backward(loss)?;
    let grads: Vec<Vec<T>> = fwd
        .params
        .iter()
        .map(|&p| g.take_grad(p).expect("parameter leaf has a gradient"))
        .collect();
    let input_grad = if want_input_grad { g.take_grad(input) } else { None };
    let grad_refs: Vec<&[T]> = grads.iter().map(|v| v.as_slice()).collect();
    let mut params: Vec<&mut [T]> = model.params_mut().into_iter().map(|t| t.data_mut()).collect();
    opt.step(&mut params, &grad_refs)?;
    Ok((loss_value, input_grad))
}

/// Fraction of images whose predicted class matches the label.
pub fn accuracy<T: Scalar, M: LogitModel<T> + ?Sized>(model: &M, data: &LabeledImages<T>) -> Result<f64> {
    use rayon::prelude::*;
    if data.is_empty() {
        return Ok(0.0);
    }
    let correct: Result<Vec<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| model.predict_class(data.image(i)).map(|c| c == data.labels[i]))
        .collect();
    Ok(correct?.iter().filter(|&&c| c).count() as f64 / data.len() as f64)
}
