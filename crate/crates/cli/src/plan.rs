use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use varbench_core::metrics::{chr_at_k, CategorySet};
use varbench_core::recsys::RankingList;

/// Ratio of target to origin clean CHR the selection aims for.
pub const TARGET_RATIO: f64 = 4.0;

/// Which class gets attacked and which class it is pushed toward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryPlan {
    pub origin: usize,
    pub target: usize,
    pub origin_chr: f64,
    pub target_chr: f64,
    /// Whether the ratio falls inside the selection tolerance.
    pub within_tolerance: bool,
}

impl CategoryPlan {
    pub fn ratio(&self) -> f64 {
        self.target_chr / self.origin_chr
    }
}

/// Picks the (origin, target) pair whose clean CHR@`k` ratio is closest to 4.
pub fn select_categories(lists: &[RankingList], cats: &[CategorySet], k: usize, tolerance: f64) -> Result<CategoryPlan> {
    let chr = cats
        .iter()
        .map(|c| Ok((c.class, chr_at_k(lists, c, k)?.mean)))
        .collect::<Result<Vec<_>>>()?;
    select_from_chr(&chr, tolerance)
}

/// `chr` holds `(class, clean CHR)`. Ties keep the pair with the smaller
/// origin id, then the smaller target id.
pub fn select_from_chr(chr: &[(usize, f64)], tolerance: f64) -> Result<CategoryPlan> {
    let mut sorted = chr.to_vec();
    sorted.sort_by_key(|c| c.0);
    let nonzero = sorted.iter().filter(|c| c.1 > 0.0).count();
    if nonzero < 2 {
        bail!("need at least two classes with nonzero clean CHR, found {nonzero}");
    }
    let mut best: Option<(f64, CategoryPlan)> = None;
    for &(origin, origin_chr) in &sorted {
        if origin_chr <= 0.0 {
            continue;
        }
        for &(target, target_chr) in &sorted {
            if target == origin || target_chr <= 0.0 {
                continue;
            }
            let gap = (target_chr / origin_chr - TARGET_RATIO).abs();
            if best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((
                    gap,
                    CategoryPlan {
                        origin,
                        target,
                        origin_chr,
                        target_chr,
                        within_tolerance: gap <= tolerance * TARGET_RATIO,
                    },
                ));
            }
        }
    }
    let (_, plan) = best.expect("two nonzero classes give at least one pair");
    if !plan.within_tolerance {
        log::warn!(
            "no class pair has a CHR ratio within {:.0}% of {TARGET_RATIO}; using {} -> {} with ratio {:.3}",
            tolerance * 100.0,
            plan.origin,
            plan.target,
            plan.ratio()
        );
    }
    Ok(plan)
}
