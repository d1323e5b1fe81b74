//! Brute-force metric references and random ranking instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varbench_core::dataio::{Interaction, SplitDataset};
use varbench_core::metrics::*;
use varbench_core::recsys::RankingList;

pub struct Instance {
    pub catalog: Vec<u32>,
    pub lists: Vec<RankingList>,
    pub cat: CategorySet,
    pub split: SplitDataset,
    pub rc: RelevanceConfig,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_items = rng.random_range(2..120u32);
    let catalog: Vec<u32> = (0..n_items).map(|i| i * 3 + 1).collect();
    let n_cat = rng.random_range(1..=n_items as usize);
    let mut shuffled = catalog.clone();
    shuffled.shuffle(rng);
    let cat = CategorySet::new(rng.random_range(0..5), shuffled[..n_cat].iter().copied());
    let n_users = rng.random_range(1..12u32);
    let mut lists = Vec::new();
    let mut split = SplitDataset::default();
    for user in 0..n_users {
        let mut items = catalog.clone();
        items.shuffle(rng);
        let len = rng.random_range(1..=items.len().min(60));
        let train_len = rng.random_range(0..=(items.len() - len).min(5));
        for (t, &item) in items[len..len + train_len].iter().enumerate() {
            split.train.push(Interaction {
                user,
                item,
                timestamp: t as i64,
            });
        }
        // the held-out item is either somewhere in the list or outside it
        let test = if rng.random_bool(0.6) {
            items[rng.random_range(0..len)]
        } else if len + train_len < items.len() {
            items[len + train_len]
        } else {
            items[0]
        };
        split.test.push(Interaction {
            user,
            item: test,
            timestamp: 100,
        });
        let mut score = 10.0;
        let entries = items[..len]
            .iter()
            .map(|&i| {
                score -= rng.random_range(0.0..1.0);
                (i, score)
            })
            .collect();
        lists.push(RankingList {
            user,
            entries,
            truncated: false,
        });
    }
    let tau = rng.random_range(0.0..3.0);
    let rc = RelevanceConfig {
        tau,
        s_max: tau + rng.random_range(0.0..2.0),
    };
    Instance {
        catalog,
        lists,
        cat,
        split,
        rc,
    }
}

pub fn chr_oracle(list: &RankingList, cat: &CategorySet, k: usize) -> f64 {
    let mut hits = 0;
    for slot in 0..k {
        if let Some(&(item, _)) = list.entries.get(slot) {
            if cat.items.iter().any(|&c| c == item) {
                hits += 1;
            }
        }
    }
    hits as f64 / k as f64
}

pub fn ncdcg_oracle(list: &RankingList, cat: &CategorySet, k: usize, rc: &RelevanceConfig) -> f64 {
    let rel_max = 2f64.powf(rc.s_max - rc.tau + 1.0) - 1.0;
    let mut cdcg = 0.0;
    for rank in 1..=k {
        if let Some(&(item, _)) = list.entries.get(rank - 1) {
            if cat.items.contains(&item) {
                cdcg += rel_max / ((1 + rank) as f64).ln() * std::f64::consts::LN_2;
            }
        }
    }
    let mut icdcg = 0.0;
    for rank in 1..=k.min(cat.items.len()) {
        icdcg += rel_max / ((1 + rank) as f64).ln() * std::f64::consts::LN_2;
    }
    cdcg / icdcg
}

/// (hit, nDCG) of one user's held-out item.
pub fn accuracy_oracle(list: &RankingList, test: u32, k: usize) -> (f64, f64) {
    for rank in 1..=k.min(list.entries.len()) {
        if list.entries[rank - 1].0 == test {
            return (1.0, 1.0 / ((1 + rank) as f64).log2());
        }
    }
    (0.0, 0.0)
}

/// Mean absolute difference form: sum_ij |x_i - x_j| / (2 n^2 mean).
pub fn gini_oracle(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut diff = 0.0;
    for a in values {
        for b in values {
            diff += (a - b).abs();
        }
    }
    diff / (2.0 * n * total)
}

pub fn frequency_gini_oracle(lists: &[RankingList], catalog: &[u32], k: usize) -> f64 {
    let freq: Vec<f64> = catalog
        .iter()
        .map(|&item| {
            lists
                .iter()
                .filter(|l| l.entries.iter().take(k).any(|e| e.0 == item))
                .count() as f64
        })
        .collect();
    gini_oracle(&freq)
}

/// Largest deviation between library metrics and the oracles over
/// `instances` random instances and K in {1, 5, 20, 50}.
pub fn max_oracle_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        for k in [1, 5, 20, 50] {
            let chr = chr_at_k(&inst.lists, &inst.cat, k).unwrap();
            let ncdcg = ncdcg_at_k(&inst.lists, &inst.cat, k, &inst.rc).unwrap();
            let (mut chr_mean, mut ncdcg_mean) = (0.0, 0.0);
            for (idx, list) in inst.lists.iter().enumerate() {
                let c = chr_oracle(list, &inst.cat, k);
                let g = ncdcg_oracle(list, &inst.cat, k, &inst.rc);
                assert_eq!(chr.values[idx].0, list.user);
                worst = worst.max((chr.values[idx].1 - c).abs());
                worst = worst.max((ncdcg.values[idx].1 - g).abs());
                chr_mean += c / inst.lists.len() as f64;
                ncdcg_mean += g / inst.lists.len() as f64;
            }
            worst = worst.max((chr.mean - chr_mean).abs()).max((ncdcg.mean - ncdcg_mean).abs());

            let acc = accuracy_metrics(&inst.lists, &inst.split, k).unwrap();
            let (mut recall, mut ndcg) = (0.0, 0.0);
            for t in &inst.split.test {
                let list = inst.lists.iter().find(|l| l.user == t.user).unwrap();
                let (r, n) = accuracy_oracle(list, t.item, k);
                recall += r / inst.split.test.len() as f64;
                ndcg += n / inst.split.test.len() as f64;
            }
            worst = worst.max((acc.recall - recall).abs()).max((acc.ndcg - ndcg).abs());

            let beyond = beyond_accuracy(&inst.lists, &inst.split, &inst.catalog, k).unwrap();
            worst = worst.max((beyond.gini - frequency_gini_oracle(&inst.lists, &inst.catalog, k)).abs());
        }
    }
    worst
}
