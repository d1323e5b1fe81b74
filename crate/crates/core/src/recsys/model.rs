use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{ItemId, UserId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecKind {
    Fm,
    Vbpr,
    Amr,
}

impl RecKind {
    pub fn name(self) -> &'static str {
        match self {
            RecKind::Fm => "fm",
            RecKind::Vbpr => "vbpr",
            RecKind::Amr => "amr",
        }
    }

    /// VBPR and AMR share the same scoring function.
    pub fn is_vbpr_family(self) -> bool {
        matches!(self, RecKind::Vbpr | RecKind::Amr)
    }
}

/// Visual-aware BPR recommender.
///
/// VBPR/AMR: `s = p_u.q_i + theta_u.(E phi_i) + b + b_u + b_i + beta.phi_i`.
/// FM: `s = p_u.(q_i + F phi_i) + b + b_u + b_i + w.phi_i`, with `F` and `w`
/// stored in `proj` and `visual_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recommender {
    pub kind: RecKind,
    pub factors: usize,
    pub visual_factors: usize,
    pub feature_dim: usize,
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    /// `[users, factors]`
    pub p: Vec<f64>,
    /// `[items, factors]`
    pub q: Vec<f64>,
    /// `[users, visual_factors]`, empty for FM.
    pub theta: Vec<f64>,
    /// `E` as `[visual_factors, feature_dim]`, or `F` as `[factors, feature_dim]`.
    pub proj: Vec<f64>,
    pub global_bias: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub visual_bias: Vec<f64>,
}

/// Item-side quantities that do not depend on the user.
#[derive(Clone, Debug)]
pub(crate) struct ItemTerms {
    /// `E phi` (VBPR) or `q + F phi` (FM).
    pub latent: Vec<f64>,
    /// `b_i + beta.phi`
    pub offset: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Recommender {
    /// All-zero parameters.
    pub fn zeros(
        kind: RecKind,
        users: Vec<UserId>,
        items: Vec<ItemId>,
        factors: usize,
        visual_factors: usize,
        feature_dim: usize,
    ) -> Self {
        let (nu, ni) = (users.len(), items.len());
        let (theta_len, proj_rows) = if kind.is_vbpr_family() {
            (nu * visual_factors, visual_factors)
        } else {
            (0, factors)
        };
        Recommender {
            kind,
            factors,
            visual_factors,
            feature_dim,
            p: vec![0.0; nu * factors],
            q: vec![0.0; ni * factors],
            theta: vec![0.0; theta_len],
            proj: vec![0.0; proj_rows * feature_dim],
            global_bias: 0.0,
            user_bias: vec![0.0; nu],
            item_bias: vec![0.0; ni],
            visual_bias: vec![0.0; feature_dim],
            users,
            items,
        }
    }

    /// Gaussian latent factors, zero biases.
    pub(crate) fn random(
        kind: RecKind,
        users: Vec<UserId>,
        items: Vec<ItemId>,
        factors: usize,
        visual_factors: usize,
        feature_dim: usize,
        init_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut m = Self::zeros(kind, users, items, factors, visual_factors, feature_dim);
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in m.p.iter_mut().chain(&mut m.q).chain(&mut m.theta).chain(&mut m.proj) {
            *v = normal.sample(&mut rng);
        }
        Ok(m)
    }

    pub fn user_index(&self, user: UserId) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    pub fn item_index(&self, item: ItemId) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }

    fn latent_dim(&self) -> usize {
        if self.kind.is_vbpr_family() {
            self.visual_factors
        } else {
            self.factors
        }
    }

    pub(crate) fn item_terms(&self, i: usize, phi: &[f64]) -> ItemTerms {
        let d = self.feature_dim;
        let k = self.latent_dim();
        let mut latent: Vec<f64> = (0..k).map(|r| dot(&self.proj[r * d..(r + 1) * d], phi)).collect();
        if !self.kind.is_vbpr_family() {
            let qi = &self.q[i * k..(i + 1) * k];
            for (l, &qv) in latent.iter_mut().zip(qi) {
                *l += qv;
            }
        }
        ItemTerms {
            latent,
            offset: self.item_bias[i] + dot(&self.visual_bias, phi),
        }
    }

    pub(crate) fn score_terms(&self, u: usize, i: usize, terms: &ItemTerms) -> f64 {
        let h = self.factors;
        let pu = &self.p[u * h..(u + 1) * h];
        let user_part = self.global_bias + self.user_bias[u];
        if self.kind.is_vbpr_family() {
            let v = self.visual_factors;
            let qi = &self.q[i * h..(i + 1) * h];
            dot(pu, qi) + dot(&self.theta[u * v..(u + 1) * v], &terms.latent) + user_part + terms.offset
        } else {
            dot(pu, &terms.latent) + user_part + terms.offset
        }
    }

    /// Preference score of `user` for `item` with image features `phi`.
    pub fn score(&self, user: UserId, item: ItemId, phi: &[f64]) -> Result<f64> {
        let u = self
            .user_index(user)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user {user}")))?;
        let i = self
            .item_index(item)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown item {item}")))?;
        if phi.len() != self.feature_dim {
            return Err(Error::shape(
                "score",
                format!("feature vector of length {}, expected {}", phi.len(), self.feature_dim),
            ));
        }
        Ok(self.score_terms(u, i, &self.item_terms(i, phi)))
    }

    /// `d s_ui / d phi_i`, which is the same for every item.
    pub(crate) fn feature_gradient(&self, u: usize) -> Vec<f64> {
        let d = self.feature_dim;
        let mut a = self.visual_bias.clone();
        let (k, weights) = if self.kind.is_vbpr_family() {
            let v = self.visual_factors;
            (v, &self.theta[u * v..(u + 1) * v])
        } else {
            let h = self.factors;
            (h, &self.p[u * h..(u + 1) * h])
        };
        for r in 0..k {
            let wr = weights[r];
            for (av, &e) in a.iter_mut().zip(&self.proj[r * d..(r + 1) * d]) {
                *av += wr * e;
            }
        }
        a
    }

    /// BPR loss `-ln sigmoid(s_ui - s_uj)` of one triple (dense indices).
    /// With `adv_eps > 0` both feature vectors are first moved by `adv_eps`
    /// along the L2-normalised loss gradient.
    pub fn triple_loss(&self, u: usize, i: usize, j: usize, phi_i: &[f64], phi_j: &[f64], adv_eps: f64) -> f64 {
        if adv_eps > 0.0 {
            let a = self.feature_gradient(u);
            let norm = dot(&a, &a).sqrt();
            if norm > 0.0 {
                let step: Vec<f64> = a.iter().map(|v| adv_eps * v / norm).collect();
                let pi: Vec<f64> = phi_i.iter().zip(&step).map(|(x, s)| x - s).collect();
                let pj: Vec<f64> = phi_j.iter().zip(&step).map(|(x, s)| x + s).collect();
                return self.triple_loss(u, i, j, &pi, &pj, 0.0);
            }
        }
        let x = self.score_terms(u, i, &self.item_terms(i, phi_i)) - self.score_terms(u, j, &self.item_terms(j, phi_j));
        softplus(-x)
    }
}

/// `ln(1 + e^x)` without overflow; equals `-ln sigmoid(-x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact VBPR score from explicit parameters, mainly as a reference.
pub fn score_vbpr(model: &Recommender, user: UserId, item: ItemId, phi: &[f64]) -> Result<f64> {
    if !model.kind.is_vbpr_family() {
        return Err(Error::InvalidArgument(format!("{} model is not VBPR-shaped", model.kind.name())));
    }
    model.score(user, item, phi)
}
