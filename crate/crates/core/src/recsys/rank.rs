use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use super::features::FeatureStore;
use super::model::{ItemTerms, Recommender};
use crate::dataio::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};

/// Top-K list for one user, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingList {
    pub user: UserId,
    pub entries: Vec<(ItemId, f64)>,
    /// Fewer than K candidates were available.
    pub truncated: bool,
}

impl RankingList {
    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Scores of every catalogue item, cached per store so that ranking many
/// users does not recompute the item-side terms.
pub struct Scorer<'a> {
    model: &'a Recommender,
    terms: Vec<ItemTerms>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Recommender, store: &FeatureStore) -> Result<Self> {
        if store.dim() != model.feature_dim {
            return Err(Error::shape(
                "scorer",
                format!("store has {} features, model expects {}", store.dim(), model.feature_dim),
            ));
        }
        if store.items() != model.items.as_slice() {
            return Err(Error::InvalidArgument("feature store and model cover different items".into()));
        }
        let terms = (0..store.len()).map(|i| model.item_terms(i, store.row(i))).collect();
        Ok(Scorer { model, terms })
    }

    pub fn score_index(&self, u: usize, i: usize) -> f64 {
        self.model.score_terms(u, i, &self.terms[i])
    }

    /// Best `k` items for `user` outside `exclude`; ties go to the smaller id.
    pub fn topk(&self, user: UserId, exclude: &BTreeSet<ItemId>, k: usize) -> Result<RankingList> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let u = self
            .model
            .user_index(user)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user {user}")))?;
        let mut scored: Vec<(ItemId, f64)> = self
            .model
            .items
            .iter()
            .enumerate()
            .filter(|(_, id)| !exclude.contains(id))
            .map(|(i, &id)| (id, self.score_index(u, i)))
            .collect();
        scored.sort_by(rank_order);
        let truncated = scored.len() < k;
        scored.truncate(k);
        Ok(RankingList {
            user,
            entries: scored,
            truncated,
        })
    }
}

/// Descending score, then ascending item id.
pub fn rank_order(a: &(ItemId, f64), b: &(ItemId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn recommend_topk(
    model: &Recommender,
    store: &FeatureStore,
    split: &SplitDataset,
    user: UserId,
    k: usize,
) -> Result<RankingList> {
    let seen = split.train_items_by_user().remove(&user).unwrap_or_default();
    Scorer::new(model, store)?.topk(user, &seen, k)
}

/// Lists for every user of the split, in user order.
pub fn recommend_all(
    model: &Recommender,
    store: &FeatureStore,
    split: &SplitDataset,
    k: usize,
) -> Result<Vec<RankingList>> {
    let scorer = Scorer::new(model, store)?;
    let seen = split.train_items_by_user();
    let empty = BTreeSet::new();
    let users: Vec<UserId> = split.users().into_iter().collect();
    let lists: Vec<RankingList> = users
        .par_iter()
        .map(|&u| scorer.topk(u, seen.get(&u).unwrap_or(&empty), k))
        .collect::<Result<_>>()?;
    let short = lists.iter().filter(|l| l.truncated).count();
    if short > 0 {
        log::warn!("{short} users have fewer than {k} candidate items");
    }
    Ok(lists)
}

/// Mean over users of the fraction of unseen, non-test items scored below
/// the held-out item (ties count half).
pub fn pairwise_auc(model: &Recommender, store: &FeatureStore, split: &SplitDataset) -> Result<f64> {
    let scorer = Scorer::new(model, store)?;
    let seen = split.train_items_by_user();
    let tests: Vec<(UserId, ItemId)> = split.test_item_by_user().into_iter().collect();
    if tests.is_empty() {
        return Err(Error::InvalidArgument("split has no test interactions".into()));
    }
    let per_user: Vec<Option<f64>> = tests
        .par_iter()
        .map(|&(user, test)| {
            let u = model.user_index(user)?;
            let t = store.index_of(test)?;
            let pos = scorer.score_index(u, t);
            let empty = BTreeSet::new();
            let train = seen.get(&user).unwrap_or(&empty);
            let (mut wins, mut n) = (0.0, 0usize);
            for (j, id) in model.items.iter().enumerate() {
                if j == t || train.contains(id) {
                    continue;
                }
                let s = scorer.score_index(u, j);
                wins += match pos.partial_cmp(&s) {
                    Some(Ordering::Greater) => 1.0,
                    Some(Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
                n += 1;
            }
            (n > 0).then(|| wins / n as f64)
        })
        .collect();
    let vals: Vec<f64> = per_user.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(Error::InvalidArgument("no user has both a test item and negatives".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Writes `user_id,rank,item_id,score` with 1-based ranks.
pub fn write_rankings(path: impl AsRef<Path>, lists: &[RankingList]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(b"user_id,rank,item_id,score\n");
    for l in lists {
        for (r, (item, score)) in l.entries.iter().enumerate() {
            writeln!(out, "{},{},{},{:e}", l.user, r + 1, item, score).expect("write to Vec");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct RankRow {
    user_id: UserId,
    rank: usize,
    item_id: ItemId,
    score: f64,
}

/// Reads lists written by [`write_rankings`]. `truncated` is not stored and
/// comes back `false`.
pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankingList>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut lists: Vec<RankingList> = Vec::new();
    for (line, rec) in reader.deserialize::<RankRow>().enumerate() {
        let row = rec?;
        match lists.last_mut() {
            Some(l) if l.user == row.user_id => {
                if row.rank != l.entries.len() + 1 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line + 2,
                        detail: format!("rank {} out of sequence", row.rank),
                    });
                }
                l.entries.push((row.item_id, row.score));
            }
            _ => {
                if row.rank != 1 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line + 2,
                        detail: format!("list for user {} starts at rank {}", row.user_id, row.rank),
                    });
                }
                lists.push(RankingList {
                    user: row.user_id,
                    entries: vec![(row.item_id, row.score)],
                    truncated: false,
                });
            }
        }
    }
    Ok(lists)
}
