//! White-box attacks on the feature extractor: FGSM, PGD and C&W L2.
//!
//! L-infinity budgets (`epsilon`, `alpha`) are expressed in 1/255 pixel
//! units, so `epsilon = 8.0` allows each pixel to move by `8 / 255`.

mod cw;
mod fgsm;
mod pgd;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cw::cw_l2;
pub use fgsm::fgsm;
pub use pgd::{pgd, pgd_batch_untargeted};

use crate::dataio::ItemId;
use crate::error::{Error, Result};
use crate::ife::LogitModel;
use crate::scalar::Scalar;
use crate::tensor::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    CwL2,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::CwL2 => "cw_l2",
        }
    }

    pub fn is_linf(self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Pgd)
    }
}

fn default_iterations() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_search_steps() -> usize {
    5
}
fn default_initial_const() -> f64 {
    1e-2
}
fn default_cw_lr() -> f64 {
    5e-3
}
fn default_max_iterations() -> usize {
    1000
}
fn default_const_growth() -> f64 {
    10.0
}

/// Attack hyper-parameters. Defaults follow the reference setup: PGD with
/// `alpha = epsilon / 6` and 10 iterations; C&W with kappa 0, a 5-step
/// search over the trade-off constant starting at 1e-2, Adam at 5e-3 and
/// at most 1000 inner iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Target class; `None` means untargeted.
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default)]
    pub epsilon: f64,
    /// PGD step size; defaults to `epsilon / 6`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub random_start: bool,
    /// Stop targeted PGD as soon as the target class is reached.
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_search_steps")]
    pub binary_search_steps: usize,
    #[serde(default = "default_initial_const")]
    pub initial_const: f64,
    /// Factor applied to the trade-off constant after a failed search step
    /// while no successful constant is known yet.
    #[serde(default = "default_const_growth")]
    pub const_growth: f64,
    #[serde(default = "default_cw_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_true")]
    pub abort_early: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    fn base(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            target: None,
            epsilon: 0.0,
            alpha: None,
            iterations: default_iterations(),
            random_start: true,
            early_stop: true,
            kappa: 0.0,
            binary_search_steps: default_search_steps(),
            initial_const: default_initial_const(),
            const_growth: default_const_growth(),
            learning_rate: default_cw_lr(),
            max_iterations: default_max_iterations(),
            abort_early: true,
            seed: 0,
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        AttackSpec {
            epsilon,
            iterations: 1,
            random_start: false,
            ..Self::base(AttackKind::Fgsm)
        }
    }

    pub fn pgd(epsilon: f64) -> Self {
        AttackSpec {
            epsilon,
            ..Self::base(AttackKind::Pgd)
        }
    }

    pub fn cw_l2() -> Self {
        Self::base(AttackKind::CwL2)
    }

    pub fn targeted(mut self, class: usize) -> Self {
        self.target = Some(class);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// PGD step in 1/255 units.
    pub fn step_size(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / 6.0)
    }

    /// Short label such as `pgd_e8` or `cw_l2`.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::CwL2 => self.kind.name().to_string(),
            k => format!("{}_e{}", k.name(), self.epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        match self.kind {
            AttackKind::Fgsm => {}
            AttackKind::Pgd => {
                let alpha = self.step_size();
                if self.iterations == 0 {
                    return bad("PGD needs at least one iteration".into());
                }
                if !(alpha >= 0.0) || alpha > self.epsilon || (alpha == 0.0 && self.epsilon > 0.0) {
                    return bad(format!("PGD step {alpha} must lie in (0, epsilon = {}]", self.epsilon));
                }
            }
            AttackKind::CwL2 => {
                if self.target.is_none() {
                    return bad("C&W L2 is a targeted attack; set a target class".into());
                }
                if self.binary_search_steps == 0 || self.max_iterations == 0 {
                    return bad("C&W needs at least one search step and one iteration".into());
                }
                if !(self.initial_const > 0.0 && self.learning_rate > 0.0 && self.const_growth > 1.0) {
                    return bad("C&W initial_const, learning_rate must be > 0 and const_growth > 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Result of attacking one input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackedImage<T> {
    pub original: Vec<T>,
    pub perturbed: Vec<T>,
    /// Class the model assigns to `perturbed`.
    pub achieved_class: usize,
    pub target: Option<usize>,
    /// Targeted: reached the target. Untargeted: left the true class.
    pub success: bool,
}

impl<T: Scalar> AttackedImage<T> {
    pub(crate) fn finish<M: LogitModel<T> + ?Sized>(
        model: &M,
        original: &[T],
        perturbed: Vec<T>,
        label: usize,
        target: Option<usize>,
    ) -> Result<Self> {
        let achieved_class = model.predict_class(&perturbed)?;
        let success = match target {
            Some(t) => achieved_class == t,
            None => achieved_class != label,
        };
        Ok(AttackedImage {
            original: original.to_vec(),
            perturbed,
            achieved_class,
            target,
            success,
        })
    }

    pub fn delta(&self) -> Vec<T> {
        self.perturbed.iter().zip(&self.original).map(|(&a, &b)| a - b).collect()
    }

    pub fn l2_norm(&self) -> T {
        self.delta().iter().map(|&d| d * d).sum::<T>().sqrt()
    }

    pub fn linf_norm(&self) -> T {
        self.delta().iter().fold(T::zero(), |m, &d| m.max(d.abs()))
    }
}

/// Dispatches on `spec.kind`. `label` is the true class of `x`.
pub fn run_attack<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    label: usize,
    spec: &AttackSpec,
) -> Result<AttackedImage<T>> {
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, x, label, spec),
        AttackKind::Pgd => pgd(model, x, label, spec),
        AttackKind::CwL2 => cw_l2(model, x, label, spec),
    }
}

/// One image to attack.
#[derive(Clone, Copy, Debug)]
pub struct AttackJob<'a, T> {
    pub item: ItemId,
    pub pixels: &'a [T],
    pub label: usize,
}

/// Attacks every job in parallel. Each item gets its own random stream
/// derived from `spec.seed` and the item id, so results do not depend on
/// scheduling.
pub fn attack_many<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    jobs: &[AttackJob<'_, T>],
    spec: &AttackSpec,
) -> Result<Vec<(ItemId, AttackedImage<T>)>> {
    spec.validate()?;
    jobs.par_iter()
        .map(|job| {
            let item_spec = AttackSpec {
                seed: item_seed(spec.seed, job.item),
                ..spec.clone()
            };
            run_attack(model, job.pixels, job.label, &item_spec).map(|r| (job.item, r))
        })
        .collect()
}

fn item_seed(seed: u64, item: ItemId) -> u64 {
    seed ^ (item as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Row of the batch attack manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub item_id: ItemId,
    pub kind: AttackKind,
    pub epsilon: f64,
    pub target_class: Option<usize>,
    pub success: bool,
    pub l2_norm: f64,
    pub linf_norm: f64,
}

impl ManifestRow {
    pub fn new<T: Scalar>(item: ItemId, spec: &AttackSpec, result: &AttackedImage<T>) -> Self {
        ManifestRow {
            item_id: item,
            kind: spec.kind,
            epsilon: spec.epsilon,
            target_class: result.target,
            success: result.success,
            l2_norm: result.l2_norm().as_f64(),
            linf_norm: result.linf_norm().as_f64(),
        }
    }
}

/// Writes `item_id,kind,epsilon,target_class,success,l2_norm,linf_norm`.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(b"item_id,kind,epsilon,target_class,success,l2_norm,linf_norm\n");
    for r in rows {
        let target = r.target_class.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{:.9},{:.9}",
            r.item_id,
            r.kind.name(),
            r.epsilon,
            target,
            r.success,
            r.l2_norm,
            r.linf_norm
        )
        .expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Gradient of the mean cross-entropy w.r.t. the inputs of a batch, plus
/// the loss and logits.
pub(crate) fn input_gradient<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    labels: &[usize],
) -> Result<(Vec<T>, T, Vec<T>)> {
    let mut g = Graph::new();
    let input = g.input(model.batch_tensor(x.to_vec())?);
    let logits = model.logits(&mut g, input)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    g.backward(loss)?;
    let grad = g.take_grad(input).expect("input leaf has a gradient after backward");
    Ok((grad, g.value(loss).item(), g.value(logits).data().to_vec()))
}

/// `x + size * sign(grad)` ascending the loss, or descending it when
/// `descend` is set.
#[inline]
pub(crate) fn sign_step<T: Scalar>(x: T, grad: T, size: T, descend: bool) -> T {
    let step = if descend { -size } else { size };
    x + step * crate::scalar::sign(grad)
}
