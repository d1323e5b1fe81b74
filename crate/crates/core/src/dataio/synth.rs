//! Desk-scale synthetic stand-in for a product catalogue with photos.
//!
//! Every class owns a stripe orientation; an image is a random base colour
//! plus a low-contrast grating in its class orientation plus Gaussian noise.
//! Users favour classes according to a geometric popularity profile, so
//! classes differ in how often they get recommended.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::images::{ImageSample, ImageShape};
use super::interactions::{Interaction, InteractionDataset, ItemId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub images_per_class: usize,
    /// Side length of the square RGB images.
    pub image_size: usize,
    pub num_users: usize,
    pub interactions_per_user: usize,
    /// 0 gives every class the same popularity; 1 puts all of it on class 0.
    pub class_preference_skew: f64,
    pub seed: u64,
    /// Probability that an interaction comes from the user's favourite class
    /// rather than from the global class profile.
    #[serde(default = "default_user_focus")]
    pub user_focus: f64,
    /// Peak-to-mean amplitude of the class grating.
    #[serde(default = "default_contrast")]
    pub pattern_contrast: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_user_focus() -> f64 {
    0.5
}

fn default_contrast() -> f64 {
    0.06
}

fn default_noise() -> f64 {
    0.015
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 3,
            images_per_class: 160,
            image_size: 16,
            num_users: 300,
            interactions_per_user: 12,
            class_preference_skew: 0.8,
            seed: 7,
            user_focus: default_user_focus(),
            pattern_contrast: default_contrast(),
            noise_std: default_noise(),
        }
    }
}

impl SynthSpec {
    pub fn num_items(&self) -> usize {
        self.num_classes * self.images_per_class
    }

    pub fn image_shape(&self) -> ImageShape {
        ImageShape::new(3, self.image_size, self.image_size)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("images_per_class", self.images_per_class),
            ("image_size", self.image_size),
            ("num_users", self.num_users),
            ("interactions_per_user", self.interactions_per_user),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.class_preference_skew) {
            return Err(Error::InvalidArgument(format!(
                "class_preference_skew {} outside [0, 1]",
                self.class_preference_skew
            )));
        }
        if !(0.0..=1.0).contains(&self.user_focus) {
            return Err(Error::InvalidArgument(format!("user_focus {} outside [0, 1]", self.user_focus)));
        }
        if !(self.pattern_contrast >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("pattern_contrast and noise_std must be >= 0".into()));
        }
        if self.interactions_per_user > self.num_items() {
            return Err(Error::InvalidArgument(format!(
                "{} interactions per user but only {} items",
                self.interactions_per_user,
                self.num_items()
            )));
        }
        Ok(())
    }
}

/// Relative popularity of each class: `(1 - skew)^(c / (C - 1))`.
pub fn class_weights(num_classes: usize, skew: f64) -> Vec<f64> {
    if num_classes == 1 {
        return vec![1.0];
    }
    (0..num_classes)
        .map(|c| (1.0 - skew).powf(c as f64 / (num_classes - 1) as f64))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: InteractionDataset,
    /// One image per item, sorted by item id, labelled with the generating class.
    pub images: Vec<ImageSample>,
}

impl SyntheticData {
    pub fn class_of(&self, item: ItemId) -> Option<usize> {
        self.images
            .binary_search_by_key(&item, |s| s.item)
            .ok()
            .and_then(|i| self.images[i].label)
    }
}

pub fn synthesize_dataset(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Item ids are a random permutation so id order carries no class signal.
    let n_items = spec.num_items();
    let mut ids: Vec<ItemId> = (0..n_items as ItemId).collect();
    ids.shuffle(&mut rng);
    let mut class_items: Vec<Vec<ItemId>> = vec![Vec::new(); spec.num_classes];
    for (slot, &id) in ids.iter().enumerate() {
        class_items[slot / spec.images_per_class].push(id);
    }

    let mut image_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    image_rng.set_stream(1);
    let mut images = Vec::with_capacity(n_items);
    for (class, items) in class_items.iter().enumerate() {
        for &item in items {
            let pixels = render(spec, class, &mut image_rng);
            images.push(ImageSample::new(item, spec.image_shape(), pixels, Some(class))?);
        }
    }
    images.sort_by_key(|s| s.item);

    let weights = class_weights(spec.num_classes, spec.class_preference_skew);
    let class_dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut user_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    user_rng.set_stream(2);
    let base_time: i64 = 1_500_000_000;
    let mut events = Vec::with_capacity(spec.num_users * spec.interactions_per_user);
    for user in 0..spec.num_users as u32 {
        let favourite = class_dist.sample(&mut user_rng);
        let mut taken = BTreeSet::new();
        for step in 0..spec.interactions_per_user {
            let item = draw_item(spec, &class_items, &class_dist, favourite, &taken, &mut user_rng);
            taken.insert(item);
            events.push(Interaction {
                user,
                item,
                timestamp: base_time + user as i64 * 1_000_000 + step as i64 * 3_600,
            });
        }
    }
    Ok(SyntheticData {
        dataset: InteractionDataset::from_interactions(events),
        images,
    })
}

fn draw_item(
    spec: &SynthSpec,
    class_items: &[Vec<ItemId>],
    class_dist: &WeightedIndex<f64>,
    favourite: usize,
    taken: &BTreeSet<ItemId>,
    rng: &mut ChaCha8Rng,
) -> ItemId {
    for _ in 0..64 {
        let class = if rng.random::<f64>() < spec.user_focus {
            favourite
        } else {
            class_dist.sample(rng)
        };
        let pool = &class_items[class];
        let item = pool[rng.random_range(0..pool.len())];
        if !taken.contains(&item) {
            return item;
        }
    }
    // the preferred pools are exhausted; fall back to any unseen item
    let free: Vec<ItemId> = class_items
        .iter()
        .flatten()
        .copied()
        .filter(|i| !taken.contains(i))
        .collect();
    free[rng.random_range(0..free.len())]
}

fn render(spec: &SynthSpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = spec.image_size;
    let plane = size * size;
    let angle = PI * class as f64 / spec.num_classes as f64;
    let (cos, sin) = (angle.cos(), angle.sin());
    let period = 4.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let amplitude = spec.pattern_contrast * rng.random_range(0.8..1.2);
    let noise = Normal::new(0.0, spec.noise_std.max(1e-12)).expect("finite std");
    let mut pixels = vec![0.0; 3 * plane];
    for c in 0..3 {
        let base = rng.random_range(0.3..0.7);
        let tint = rng.random_range(0.6..1.0);
        for y in 0..size {
            for x in 0..size {
                let t = 2.0 * PI * (x as f64 * cos + y as f64 * sin) / period + phase;
                let mut v = base + amplitude * tint * t.sin();
                if spec.noise_std > 0.0 {
                    v += noise.sample(rng);
                }
                pixels[c * plane + y * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    pixels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            num_classes: 3,
            images_per_class: 20,
            image_size: 8,
            num_users: 60,
            interactions_per_user: 6,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = synthesize_dataset(&small()).unwrap();
        let b = synthesize_dataset(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.images, b.images);
        let c = synthesize_dataset(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn shapes_and_counts() {
        let spec = small();
        let data = synthesize_dataset(&spec).unwrap();
        assert_eq!(data.images.len(), 60);
        assert_eq!(data.dataset.len(), 60 * 6);
        assert_eq!(data.dataset.users().len(), 60);
        for (expected, img) in data.images.iter().enumerate() {
            assert_eq!(img.item as usize, expected);
            assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        for class in 0..3 {
            let n = data.images.iter().filter(|s| s.label == Some(class)).count();
            assert_eq!(n, 20);
        }
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        assert!(synthesize_dataset(&SynthSpec {
            interactions_per_user: 61,
            ..small()
        })
        .is_err());
        assert!(synthesize_dataset(&SynthSpec {
            class_preference_skew: 1.5,
            ..small()
        })
        .is_err());
        assert!(synthesize_dataset(&SynthSpec {
            num_users: 0,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn class_weights_profile() {
        assert_eq!(class_weights(3, 0.0), vec![1.0, 1.0, 1.0]);
        let w = class_weights(3, 0.8);
        assert!((w[0] / w[2] - 5.0).abs() < 1e-12);
        assert_eq!(class_weights(2, 1.0), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_skew_balances_classes() {
        // chi-square over 3 classes, 2 dof; 13.8 is the 0.999 quantile
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let spec = SynthSpec {
                class_preference_skew: 0.0,
                seed,
                num_users: 200,
                ..small()
            };
            let data = synthesize_dataset(&spec).unwrap();
            let mut counts = [0f64; 3];
            for i in data.dataset.interactions() {
                counts[data.class_of(i.item).unwrap()] += 1.0;
            }
            let expected = data.dataset.len() as f64 / 3.0;
            let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
            worst = worst.max(chi2);
        }
        assert!(worst < 13.8, "chi2 = {worst}");
    }

    #[test]
    fn skew_orders_class_popularity() {
        let data = synthesize_dataset(&SynthSpec {
            num_users: 200,
            ..small()
        })
        .unwrap();
        let mut counts = [0usize; 3];
        for i in data.dataset.interactions() {
            counts[data.class_of(i.item).unwrap()] += 1;
        }
        assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
    }
}
