//! Attack, category-push, accuracy and beyond-accuracy measures.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackedImage;
use crate::dataio::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::recsys::{FeatureStore, RankingList};
use crate::scalar::Scalar;

/// Items whose clean images the classifier assigns to `class`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategorySet {
    pub class: usize,
    pub items: BTreeSet<ItemId>,
}

impl CategorySet {
    pub fn new(class: usize, items: impl IntoIterator<Item = ItemId>) -> Self {
        CategorySet {
            class,
            items: items.into_iter().collect(),
        }
    }

    /// Collects the items predicted as `class`.
    pub fn from_predictions(class: usize, predictions: impl IntoIterator<Item = (ItemId, usize)>) -> Self {
        Self::new(class, predictions.into_iter().filter(|p| p.1 == class).map(|p| p.0))
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Graded relevance parameters; the implicit-feedback default is
/// `tau = s_max = 1`, which makes every category item worth 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceConfig {
    pub tau: f64,
    pub s_max: f64,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig { tau: 1.0, s_max: 1.0 }
    }
}

impl RelevanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max >= self.tau) {
            return Err(Error::InvalidArgument(format!(
                "s_max ({}) must be >= tau ({})",
                self.s_max, self.tau
            )));
        }
        Ok(())
    }

    /// `2^(s - tau + 1) - 1`
    pub fn rel(&self, s: f64) -> f64 {
        (s - self.tau + 1.0).exp2() - 1.0
    }

    pub fn ideal_rel(&self) -> f64 {
        self.rel(self.s_max)
    }
}

/// Per-user values and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PerUser {
    pub values: Vec<(UserId, f64)>,
    pub mean: f64,
}

impl PerUser {
    fn from_values(values: Vec<(UserId, f64)>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no users to evaluate".into()));
        }
        let mean = values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64;
        Ok(PerUser { values, mean })
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of each user's top-K slots taken by category items; slots
/// missing from short lists count as misses.
pub fn chr_at_k(lists: &[RankingList], cat: &CategorySet, k: usize) -> Result<PerUser> {
    check_k(k)?;
    PerUser::from_values(
        lists
            .iter()
            .map(|l| {
                let hits = l.items().take(k).filter(|&i| cat.contains(i)).count();
                (l.user, hits as f64 / k as f64)
            })
            .collect(),
    )
}

/// Rank-discounted category hits normalised by the best achievable list.
pub fn ncdcg_at_k(lists: &[RankingList], cat: &CategorySet, k: usize, rc: &RelevanceConfig) -> Result<PerUser> {
    check_k(k)?;
    rc.validate()?;
    let rel = rc.ideal_rel();
    let ideal: f64 = (1..=k.min(cat.len())).map(|r| rel / (1.0 + r as f64).log2()).sum();
    if !(ideal > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ideal CDCG is zero for category {} with {} items",
            cat.class,
            cat.len()
        )));
    }
    PerUser::from_values(
        lists
            .iter()
            .map(|l| {
                let cdcg: f64 = l
                    .items()
                    .take(k)
                    .enumerate()
                    .filter(|(_, i)| cat.contains(*i))
                    .map(|(pos, _)| rel / (2.0 + pos as f64).log2())
                    .sum();
                (l.user, cdcg / ideal)
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyMetrics {
    pub recall: f64,
    pub ndcg: f64,
}

/// Leave-one-out Recall@K and nDCG@K averaged over the split's test users.
pub fn accuracy_metrics(lists: &[RankingList], split: &SplitDataset, k: usize) -> Result<AccuracyMetrics> {
    check_k(k)?;
    let by_user: HashMap<UserId, &RankingList> = lists.iter().map(|l| (l.user, l)).collect();
    let tests = split.test_item_by_user();
    if tests.is_empty() {
        return Err(Error::InvalidArgument("split has no test interactions".into()));
    }
    let (mut recall, mut ndcg) = (0.0, 0.0);
    for (user, test) in &tests {
        let list = by_user
            .get(user)
            .ok_or_else(|| Error::InvalidArgument(format!("no ranking list for user {user}")))?;
        if let Some(pos) = list.items().take(k).position(|i| i == *test) {
            recall += 1.0;
            ndcg += 1.0 / (2.0 + pos as f64).log2();
        }
    }
    let n = tests.len() as f64;
    Ok(AccuracyMetrics {
        recall: recall / n,
        ndcg: ndcg / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeyondAccuracy {
    pub icov: usize,
    pub gini: f64,
    pub efd: f64,
}

/// Gini index of non-negative values: 0 for equality, `(n-1)/n` when one
/// entry holds everything.
pub fn gini(values: &[f64]) -> f64 {
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    if x.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - n - 1.0) * v)
        .sum();
    weighted / (n * total)
}

/// Coverage, Gini of recommendation frequencies over `catalog`, and
/// expected free discovery with train popularity floored at one interaction.
pub fn beyond_accuracy(
    lists: &[RankingList],
    split: &SplitDataset,
    catalog: &[ItemId],
    k: usize,
) -> Result<BeyondAccuracy> {
    check_k(k)?;
    if lists.is_empty() {
        return Err(Error::InvalidArgument("no ranking lists".into()));
    }
    let mut freq: BTreeMap<ItemId, f64> = catalog.iter().map(|&i| (i, 0.0)).collect();
    for l in lists {
        for i in l.items().take(k) {
            *freq.entry(i).or_insert(0.0) += 1.0;
        }
    }
    let icov = freq.values().filter(|&&f| f > 0.0).count();
    let gini = gini(&freq.values().copied().collect::<Vec<_>>());

    let mut pop: HashMap<ItemId, usize> = HashMap::new();
    for ev in &split.train {
        *pop.entry(ev.item).or_default() += 1;
    }
    let n_users = split.users().len().max(1) as f64;
    let efd = lists
        .iter()
        .map(|l| {
            l.items()
                .take(k)
                .map(|i| {
                    let p = pop.get(&i).copied().unwrap_or(0).max(1) as f64 / n_users;
                    -p.log2()
                })
                .sum::<f64>()
                / k as f64
        })
        .sum::<f64>()
        / lists.len() as f64;
    Ok(BeyondAccuracy { icov, gini, efd })
}

/// Fraction of attacked images classified as `target`.
pub fn success_rate<T: Scalar>(attacked: &[AttackedImage<T>], target: usize) -> Result<f64> {
    if attacked.is_empty() {
        return Err(Error::InvalidArgument("no attacked images".into()));
    }
    Ok(attacked.iter().filter(|a| a.achieved_class == target).count() as f64 / attacked.len() as f64)
}

/// Mean over `items` of `||phi_before - phi_after||^2 / gamma`.
pub fn feature_loss(before: &FeatureStore, after: &FeatureStore, items: &[ItemId]) -> Result<f64> {
    if before.dim() != after.dim() {
        return Err(Error::shape(
            "feature_loss",
            format!("feature sizes {} and {}", before.dim(), after.dim()),
        ));
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument("no items".into()));
    }
    let gamma = before.dim() as f64;
    let mut total = 0.0;
    for &item in items {
        let missing = || Error::InvalidArgument(format!("item {item} missing from a feature store"));
        let a = before.get(item).ok_or_else(missing)?;
        let b = after.get(item).ok_or_else(missing)?;
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / gamma;
    }
    Ok(total / items.len() as f64)
}
