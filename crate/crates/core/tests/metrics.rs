mod support {
    pub mod oracles;
}

use proptest::prelude::*;
use varbench_core::metrics::*;
use varbench_core::recsys::RankingList;

use support::oracles::*;

fn list_of(items: &[u32]) -> RankingList {
    RankingList {
        user: 0,
        entries: items.iter().enumerate().map(|(r, &i)| (i, -(r as f64))).collect(),
        truncated: false,
    }
}

#[test]
fn metrics_agree_with_brute_force() {
    let worst = max_oracle_deviation(1000, 11);
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn gini_oracle_sanity() {
    assert!((gini_oracle(&[4.0, 1.0, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
    assert!((gini(&[4.0, 1.0, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(gini(&[2.0, 2.0, 2.0, 2.0]), 0.0);
}

#[test]
fn identical_lists_cover_k_items() {
    let split = varbench_core::dataio::SplitDataset::default();
    let lists: Vec<RankingList> = (0..4)
        .map(|u| RankingList {
            user: u,
            ..list_of(&[7, 3, 9, 1, 5])
        })
        .collect();
    let catalog: Vec<u32> = (0..12).collect();
    let b = beyond_accuracy(&lists, &split, &catalog, 3).unwrap();
    assert_eq!(b.icov, 3);
}

fn category_strategy() -> impl Strategy<Value = (Vec<u32>, Vec<bool>, usize)> {
    (1usize..40).prop_flat_map(|n| {
        (
            Just((0..n as u32).collect::<Vec<_>>()).prop_shuffle(),
            proptest::collection::vec(any::<bool>(), n),
            1usize..=50,
        )
    })
}

proptest! {
    #[test]
    fn chr_ignores_order_within_top_k((items, member, k) in category_strategy(), seed in any::<u64>()) {
        let cat = CategorySet::new(0, items.iter().zip(&member).filter(|p| *p.1).map(|p| *p.0));
        let base = chr_at_k(&[list_of(&items)], &cat, k).unwrap().mean;
        let mut permuted = items.clone();
        let top = k.min(permuted.len());
        use rand::{seq::SliceRandom, SeedableRng};
        permuted[..top].shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(chr_at_k(&[list_of(&permuted)], &cat, k).unwrap().mean, base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn ncdcg_is_bounded_and_rank_monotone((items, member, k) in category_strategy(), tau in 0.0f64..3.0, gap in 0.0f64..2.0) {
        prop_assume!(member.iter().any(|&m| m));
        let cat = CategorySet::new(0, items.iter().zip(&member).filter(|p| *p.1).map(|p| *p.0));
        let rc = RelevanceConfig { tau, s_max: tau + gap };
        let value = |l: &[u32]| ncdcg_at_k(&[list_of(l)], &cat, k, &rc).unwrap().mean;
        let base = value(&items);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
        // promoting a category item past a non-category neighbour never hurts
        for pos in 1..items.len() {
            if cat.contains(items[pos]) && !cat.contains(items[pos - 1]) {
                let mut better = items.clone();
                better.swap(pos, pos - 1);
                prop_assert!(value(&better) >= base - 1e-12);
            }
        }
        let ideal_prefix = k.min(cat.len());
        let is_ideal = items.iter().take(ideal_prefix).all(|&i| cat.contains(i));
        prop_assert_eq!((base - 1.0).abs() < 1e-12, is_ideal);
    }

    #[test]
    fn gini_matches_pairwise_form(values in proptest::collection::vec(0.0f64..100.0, 1..60)) {
        let g = gini(&values);
        prop_assert!((g - gini_oracle(&values)).abs() < 1e-9);
        prop_assert!((0.0..1.0).contains(&g) || g == 0.0);
    }
}
