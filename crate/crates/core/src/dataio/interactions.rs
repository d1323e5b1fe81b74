use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// One implicit-feedback event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
}

/// Implicit 0/1 user-item feedback with at most one interaction per pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionDataset {
    users: BTreeSet<UserId>,
    items: BTreeSet<ItemId>,
    /// Sorted by `(user, item)`.
    interactions: Vec<Interaction>,
}

impl InteractionDataset {
    /// Builds a dataset from raw events; repeated `(user, item)` pairs
    /// collapse into one interaction carrying the latest timestamp.
    pub fn from_interactions(events: impl IntoIterator<Item = Interaction>) -> Self {
        let mut latest: BTreeMap<(UserId, ItemId), i64> = BTreeMap::new();
        for e in events {
            latest
                .entry((e.user, e.item))
                .and_modify(|t| *t = (*t).max(e.timestamp))
                .or_insert(e.timestamp);
        }
        let interactions: Vec<Interaction> = latest
            .into_iter()
            .map(|((user, item), timestamp)| Interaction {
                user,
                item,
                timestamp,
            })
            .collect();
        let users = interactions.iter().map(|i| i.user).collect();
        let items = interactions.iter().map(|i| i.item).collect();
        InteractionDataset {
            users,
            items,
            interactions,
        }
    }

    /// Like [`from_interactions`](Self::from_interactions) but with explicit
    /// entity sets, which may contain users or items without interactions.
    pub fn with_entities(
        users: BTreeSet<UserId>,
        items: BTreeSet<ItemId>,
        events: impl IntoIterator<Item = Interaction>,
    ) -> Result<Self> {
        let mut ds = Self::from_interactions(events);
        if let Some(bad) = ds.users.iter().find(|u| !users.contains(u)) {
            return Err(Error::InvalidArgument(format!("interaction references unknown user {bad}")));
        }
        if let Some(bad) = ds.items.iter().find(|i| !items.contains(i)) {
            return Err(Error::InvalidArgument(format!("interaction references unknown item {bad}")));
        }
        ds.users = users;
        ds.items = items;
        Ok(ds)
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn density(&self) -> f64 {
        density(self.interactions.len(), self.users.len(), self.items.len())
    }

    pub fn user_degrees(&self) -> HashMap<UserId, usize> {
        let mut deg: HashMap<UserId, usize> = self.users.iter().map(|&u| (u, 0)).collect();
        for i in &self.interactions {
            *deg.get_mut(&i.user).expect("interaction user is registered") += 1;
        }
        deg
    }

    pub fn item_degrees(&self) -> HashMap<ItemId, usize> {
        let mut deg: HashMap<ItemId, usize> = self.items.iter().map(|&i| (i, 0)).collect();
        for i in &self.interactions {
            *deg.get_mut(&i.item).expect("interaction item is registered") += 1;
        }
        deg
    }
}

/// `|S| / (|U| * |I|)`; zero for an empty catalogue.
pub fn density(interactions: usize, users: usize, items: usize) -> f64 {
    if users == 0 || items == 0 {
        return 0.0;
    }
    interactions as f64 / (users as f64 * items as f64)
}

/// Published statistics of a real dataset after k-core filtering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub name: &'static str,
    pub kcore: usize,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl DatasetStats {
    pub fn density(&self) -> f64 {
        density(self.interactions, self.users, self.items)
    }
}

pub const AMAZON_MEN: DatasetStats = DatasetStats {
    name: "Amazon Men",
    kcore: 5,
    users: 24_379,
    items: 7_371,
    interactions: 89_020,
};

pub const AMAZON_WOMEN: DatasetStats = DatasetStats {
    name: "Amazon Women",
    kcore: 10,
    users: 16_668,
    items: 2_981,
    interactions: 54_473,
};

pub const TRADESY: DatasetStats = DatasetStats {
    name: "Tradesy",
    kcore: 10,
    users: 6_253,
    items: 1_670,
    interactions: 21_533,
};

/// Reads `user_id,item_id,timestamp` rows (header required).
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let field = |idx: usize, name: &str| -> Result<i64> {
            record[idx]
                .parse::<i64>()
                .map_err(|e| parse_err(line, format!("{name} {:?}: {e}", &record[idx])))
        };
        let user = field(0, "user_id")?;
        let item = field(1, "item_id")?;
        let timestamp = field(2, "timestamp")?;
        let user = UserId::try_from(user).map_err(|_| parse_err(line, format!("user_id {user} out of range")))?;
        let item = ItemId::try_from(item).map_err(|_| parse_err(line, format!("item_id {item} out of range")))?;
        events.push(Interaction {
            user,
            item,
            timestamp,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(InteractionDataset::from_interactions(events))
}

pub fn write_interactions(path: impl AsRef<Path>, interactions: &[Interaction]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(32 * interactions.len() + 32);
    out.extend_from_slice(b"user_id,item_id,timestamp\n");
    for i in interactions {
        writeln!(out, "{},{},{}", i.user, i.item, i.timestamp).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// none remain. Entities left without interactions are dropped as well.
pub fn kcore_filter(ds: &InteractionDataset, k: usize) -> InteractionDataset {
    let k = k.max(1);
    let mut current: Vec<Interaction> = ds.interactions.clone();
    loop {
        let mut user_deg: HashMap<UserId, usize> = HashMap::new();
        let mut item_deg: HashMap<ItemId, usize> = HashMap::new();
        for i in &current {
            *user_deg.entry(i.user).or_default() += 1;
            *item_deg.entry(i.item).or_default() += 1;
        }
        let before = current.len();
        current.retain(|i| user_deg[&i.user] >= k && item_deg[&i.item] >= k);
        if current.len() == before {
            break;
        }
    }
    if current.is_empty() && !ds.is_empty() {
        warn!("{k}-core filtering removed every interaction");
    }
    InteractionDataset::from_interactions(current)
}

/// Train/test partition with one held-out interaction per user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl SplitDataset {
    pub fn users(&self) -> BTreeSet<UserId> {
        self.train.iter().chain(&self.test).map(|i| i.user).collect()
    }

    /// Every item in train or test.
    pub fn items(&self) -> BTreeSet<ItemId> {
        self.train.iter().chain(&self.test).map(|i| i.item).collect()
    }

    pub fn train_items_by_user(&self) -> BTreeMap<UserId, BTreeSet<ItemId>> {
        let mut out: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
        for i in &self.train {
            out.entry(i.user).or_default().insert(i.item);
        }
        out
    }

    pub fn test_item_by_user(&self) -> BTreeMap<UserId, ItemId> {
        self.test.iter().map(|i| (i.user, i.item)).collect()
    }
}

/// Holds out each user's latest interaction; equal timestamps resolve to
/// the larger item id.
pub fn leave_one_out(ds: &InteractionDataset) -> Result<SplitDataset> {
    let mut by_user: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for &i in &ds.interactions {
        by_user.entry(i.user).or_default().push(i);
    }
    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::with_capacity(by_user.len());
    for (user, events) in by_user {
        if events.len() < 2 {
            return Err(Error::SingleInteraction(user));
        }
        let held = *events
            .iter()
            .max_by_key(|i| (i.timestamp, i.item))
            .expect("non-empty");
        test.push(held);
        train.extend(events.into_iter().filter(|i| i.item != held.item));
    }
    Ok(SplitDataset { train, test })
}
