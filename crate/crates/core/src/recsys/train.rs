use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureStore;
use super::model::{dot, sigmoid, softplus, RecKind, Recommender};
use crate::dataio::SplitDataset;
use crate::error::{Error, Result};

fn default_factors() -> usize {
    16
}
fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    0.05
}
fn default_reg() -> f64 {
    1e-4
}
fn default_adv_eps() -> f64 {
    0.5
}
fn default_adv_reg() -> f64 {
    1.0
}
fn default_init_std() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecConfig {
    #[serde(default = "default_factors")]
    pub factors: usize,
    #[serde(default = "default_factors")]
    pub visual_factors: usize,
    /// Full passes over the training interactions.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_reg")]
    pub reg: f64,
    /// AMR feature perturbation radius.
    #[serde(default = "default_adv_eps")]
    pub adv_eps: f64,
    /// AMR weight of the adversarial loss term.
    #[serde(default = "default_adv_reg")]
    pub adv_reg: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            factors: default_factors(),
            visual_factors: default_factors(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            reg: default_reg(),
            adv_eps: default_adv_eps(),
            adv_reg: default_adv_reg(),
            init_std: default_init_std(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecReport {
    /// Mean per-triple loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Users with no item left to sample as a negative.
    pub skipped_users: usize,
}

/// BPR training of an FM or VBPR model; `RecKind::Amr` adds the
/// adversarial feature term.
pub fn train_bpr(
    kind: RecKind,
    split: &SplitDataset,
    store: &FeatureStore,
    cfg: &RecConfig,
) -> Result<(Recommender, RecReport)> {
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("no training interactions".into()));
    }
    if cfg.factors == 0 || cfg.visual_factors == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("factors and learning_rate must be positive".into()));
    }
    if let Some(missing) = split.items().into_iter().find(|&i| store.index_of(i).is_none()) {
        return Err(Error::InvalidArgument(format!("item {missing} has no feature vector")));
    }
    let users: Vec<_> = split.users().into_iter().collect();
    let mut model = Recommender::random(
        kind,
        users,
        store.items().to_vec(),
        cfg.factors,
        cfg.visual_factors,
        store.dim(),
        cfg.init_std,
        cfg.seed,
    )?;

    let n_items = store.len();
    let train_sets: Vec<BTreeSet<usize>> = {
        let mut sets = vec![BTreeSet::new(); model.users.len()];
        for ev in &split.train {
            let u = model.user_index(ev.user).expect("user collected from split");
            sets[u].insert(store.index_of(ev.item).expect("checked above"));
        }
        sets
    };
    let positives: Vec<(usize, usize)> = split
        .train
        .iter()
        .map(|ev| (model.user_index(ev.user).unwrap(), store.index_of(ev.item).unwrap()))
        .collect();
    let saturated: Vec<bool> = train_sets.iter().map(|s| s.len() >= n_items).collect();
    let skipped = saturated.iter().filter(|&&s| s).count();
    if skipped > 0 {
        log::warn!("{skipped} users interacted with every item and are skipped");
    }

    let adv = (kind == RecKind::Amr && cfg.adv_reg > 0.0).then_some((cfg.adv_eps, cfg.adv_reg));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut report = RecReport {
        skipped_users: skipped,
        ..RecReport::default()
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &k in &order {
            let (u, i) = positives[k];
            if saturated[u] {
                continue;
            }
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !train_sets[u].contains(&j) {
                    break j;
                }
            };
            total += sgd_step(&mut model, u, i, j, store.row(i), store.row(j), cfg, adv);
            count += 1;
        }
        let mean = if count > 0 { total / count as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: mean,
            });
        }
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}

/// AMR: VBPR scoring trained with the extra adversarial term.
pub fn train_amr(split: &SplitDataset, store: &FeatureStore, cfg: &RecConfig) -> Result<(Recommender, RecReport)> {
    train_bpr(RecKind::Amr, split, store, cfg)
}

/// One stochastic step on `-ln sigmoid(x)` (plus the weighted adversarial
/// term) with L2 weight decay on the touched parameters. Returns the loss.
fn sgd_step(
    m: &mut Recommender,
    u: usize,
    i: usize,
    j: usize,
    phi_i: &[f64],
    phi_j: &[f64],
    cfg: &RecConfig,
    adv: Option<(f64, f64)>,
) -> f64 {
    let (lr, reg) = (cfg.learning_rate, cfg.reg);
    let dim = m.feature_dim;
    let diff: Vec<f64> = phi_i.iter().zip(phi_j).map(|(a, b)| a - b).collect();
    let x = pair_margin(m, u, i, j, &diff);
    let w = sigmoid(-x);
    let mut loss = softplus(-x);

    // weighted feature differences of every loss term
    let mut terms = vec![(w, diff)];
    if let Some((eps, lambda)) = adv {
        let a = m.feature_gradient(u);
        let norm = dot(&a, &a).sqrt();
        if norm > 0.0 {
            let d_adv: Vec<f64> = terms[0].1.iter().zip(&a).map(|(d, av)| d - 2.0 * eps * av / norm).collect();
            let x_adv = pair_margin(m, u, i, j, &d_adv);
            loss += lambda * softplus(-x_adv);
            terms.push((lambda * sigmoid(-x_adv), d_adv));
        }
    }
    let coef: f64 = terms.iter().map(|t| t.0).sum();
    let mut wdiff = vec![0.0; dim];
    for (wt, d) in &terms {
        for (acc, v) in wdiff.iter_mut().zip(d) {
            *acc += wt * v;
        }
    }

    let h = m.factors;
    let pu: Vec<f64> = m.p[u * h..(u + 1) * h].to_vec();
    let qi: Vec<f64> = m.q[i * h..(i + 1) * h].to_vec();
    let qj: Vec<f64> = m.q[j * h..(j + 1) * h].to_vec();

    if m.kind.is_vbpr_family() {
        let v = m.visual_factors;
        let tu: Vec<f64> = m.theta[u * v..(u + 1) * v].to_vec();
        // E wdiff, before E moves
        let ed: Vec<f64> = (0..v).map(|r| dot(&m.proj[r * dim..(r + 1) * dim], &wdiff)).collect();
        for k in 0..h {
            m.p[u * h + k] += lr * (coef * (qi[k] - qj[k]) - reg * pu[k]);
            m.q[i * h + k] += lr * (coef * pu[k] - reg * qi[k]);
            m.q[j * h + k] += lr * (-coef * pu[k] - reg * qj[k]);
        }
        for r in 0..v {
            m.theta[u * v + r] += lr * (ed[r] - reg * tu[r]);
            let row = &mut m.proj[r * dim..(r + 1) * dim];
            for (e, &dv) in row.iter_mut().zip(&wdiff) {
                *e += lr * (tu[r] * dv - reg * *e);
            }
        }
    } else {
        // x = b_i - b_j + p_u.(q_i - q_j + F d) + w.d
        let fd: Vec<f64> = (0..h).map(|r| dot(&m.proj[r * dim..(r + 1) * dim], &wdiff)).collect();
        for k in 0..h {
            m.p[u * h + k] += lr * (coef * (qi[k] - qj[k]) + fd[k] - reg * pu[k]);
            m.q[i * h + k] += lr * (coef * pu[k] - reg * qi[k]);
            m.q[j * h + k] += lr * (-coef * pu[k] - reg * qj[k]);
            let row = &mut m.proj[k * dim..(k + 1) * dim];
            for (f, &dv) in row.iter_mut().zip(&wdiff) {
                *f += lr * (pu[k] * dv - reg * *f);
            }
        }
    }
    m.item_bias[i] += lr * (coef - reg * m.item_bias[i]);
    m.item_bias[j] += lr * (-coef - reg * m.item_bias[j]);
    for (b, &dv) in m.visual_bias.iter_mut().zip(&wdiff) {
        *b += lr * (dv - reg * *b);
    }
    loss
}

/// `s_ui - s_uj` when the two feature vectors differ by `diff`.
fn pair_margin(m: &Recommender, u: usize, i: usize, j: usize, diff: &[f64]) -> f64 {
    let h = m.factors;
    let dim = m.feature_dim;
    let pu = &m.p[u * h..(u + 1) * h];
    let qi = &m.q[i * h..(i + 1) * h];
    let qj = &m.q[j * h..(j + 1) * h];
    let dq: f64 = pu.iter().zip(qi.iter().zip(qj)).map(|(p, (a, b))| p * (a - b)).sum();
    let visual: f64 = if m.kind.is_vbpr_family() {
        let v = m.visual_factors;
        let tu = &m.theta[u * v..(u + 1) * v];
        (0..v).map(|r| tu[r] * dot(&m.proj[r * dim..(r + 1) * dim], diff)).sum()
    } else {
        (0..h).map(|r| pu[r] * dot(&m.proj[r * dim..(r + 1) * dim], diff)).sum()
    };
    dq + visual + m.item_bias[i] - m.item_bias[j] + dot(&m.visual_bias, diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(kind: RecKind, seed: u64) -> Recommender {
        let mut m = Recommender::random(kind, vec![0, 1], vec![0, 1, 2], 3, 2, 4, 0.5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for b in m.item_bias.iter_mut().chain(&mut m.visual_bias) {
            *b = rng.random_range(-0.5..0.5);
        }
        m
    }

    fn params_mut(m: &mut Recommender) -> Vec<&mut f64> {
        m.p.iter_mut()
            .chain(&mut m.q)
            .chain(&mut m.theta)
            .chain(&mut m.proj)
            .chain(&mut m.item_bias)
            .chain(&mut m.visual_bias)
            .collect()
    }

    /// An SGD step with zero weight decay divided by the learning rate must
    /// equal the negative finite-difference gradient of the triple loss.
    fn check_step_matches_fd(kind: RecKind, adv: Option<(f64, f64)>) {
        let phi = [[0.3, -0.2, 0.9, 0.1], [0.5, 0.4, -0.7, 0.2], [-0.1, 0.8, 0.3, -0.6]];
        for seed in 0..20 {
            let m0 = random_model(kind, seed);
            let lr = 1e-7;
            let cfg = RecConfig {
                learning_rate: lr,
                reg: 0.0,
                ..RecConfig::default()
            };
            let (u, i, j) = (seed as usize % 2, 0, 1 + seed as usize % 2);
            let mut stepped = m0.clone();
            sgd_step(&mut stepped, u, i, j, &phi[i], &phi[j], &cfg, adv);
            let before: Vec<f64> = params_mut(&mut m0.clone()).into_iter().map(|v| *v).collect();
            let after: Vec<f64> = params_mut(&mut stepped).into_iter().map(|v| *v).collect();

            let loss = |m: &Recommender| {
                let mut l = m.triple_loss(u, i, j, &phi[i], &phi[j], 0.0);
                if let Some((eps, lambda)) = adv {
                    l += lambda * m.triple_loss(u, i, j, &phi[i], &phi[j], eps);
                }
                l
            };
            let h = 1e-6;
            for k in 0..before.len() {
                let mut plus = m0.clone();
                *params_mut(&mut plus)[k] += h;
                let mut minus = m0.clone();
                *params_mut(&mut minus)[k] -= h;
                let fd = if adv.is_some() {
                    // the perturbation direction is held fixed during the step
                    let mut p = plus.clone();
                    let mut q = minus.clone();
                    fixed_direction_loss(&mut p, &m0, u, i, j, &phi, adv.unwrap())
                        - fixed_direction_loss(&mut q, &m0, u, i, j, &phi, adv.unwrap())
                } else {
                    loss(&plus) - loss(&minus)
                } / (2.0 * h);
                let step = (after[k] - before[k]) / lr;
                assert!((step + fd).abs() < 1e-5 * (1.0 + fd.abs()), "{kind:?} seed {seed} param {k}: step {step}, fd {fd}");
            }
        }
    }

    fn fixed_direction_loss(
        m: &mut Recommender,
        reference: &Recommender,
        u: usize,
        i: usize,
        j: usize,
        phi: &[[f64; 4]; 3],
        (eps, lambda): (f64, f64),
    ) -> f64 {
        let a = reference.feature_gradient(u);
        let norm = dot(&a, &a).sqrt();
        let pi: Vec<f64> = phi[i].iter().zip(&a).map(|(x, g)| x - eps * g / norm).collect();
        let pj: Vec<f64> = phi[j].iter().zip(&a).map(|(x, g)| x + eps * g / norm).collect();
        m.triple_loss(u, i, j, &phi[i], &phi[j], 0.0) + lambda * m.triple_loss(u, i, j, &pi, &pj, 0.0)
    }

    #[test]
    fn vbpr_step_is_the_bpr_gradient() {
        check_step_matches_fd(RecKind::Vbpr, None);
    }

    #[test]
    fn fm_step_is_the_bpr_gradient() {
        check_step_matches_fd(RecKind::Fm, None);
    }

    #[test]
    fn amr_step_includes_adversarial_term() {
        check_step_matches_fd(RecKind::Amr, Some((0.5, 1.0)));
    }

    #[test]
    fn equal_scores_give_ln2() {
        let m = Recommender::zeros(RecKind::Vbpr, vec![0], vec![0, 1], 2, 2, 3);
        let l = m.triple_loss(0, 0, 1, &[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn step_raises_positive_and_lowers_negative() {
        let phi = [[0.3, -0.2, 0.9, 0.1], [0.5, 0.4, -0.7, 0.2], [-0.1, 0.8, 0.3, -0.6]];
        for kind in [RecKind::Fm, RecKind::Vbpr] {
            for seed in 0..50 {
                let mut m = random_model(kind, seed);
                let terms = |m: &Recommender, k: usize| m.score_terms(0, k, &m.item_terms(k, &phi[k]));
                let (si, sj) = (terms(&m, 0), terms(&m, 1));
                let cfg = RecConfig {
                    learning_rate: 1e-3,
                    reg: 0.0,
                    ..RecConfig::default()
                };
                sgd_step(&mut m, 0, 0, 1, &phi[0], &phi[1], &cfg, None);
                assert!(terms(&m, 0) - terms(&m, 1) > si - sj, "{kind:?} seed {seed}");
            }
        }
    }
}
