//! Multi-behavior implicit-feedback datasets: ingestion, cleaning,
//! leave-one-out splitting, synthetic cascade generation, and user
//! sparsity grouping.
//!
//! A dataset holds one interaction set per behavior level, ordered from the
//! lowest level to the highest; the last level is the target behavior the
//! recommender optimizes. Datasets are immutable after construction and safe
//! to share read-only across threads.

mod groups;
mod ingest;
mod split;
mod synth;

pub use groups::{sparsity_groups, CountRange};
pub use ingest::{export_csv, ingest_csv, ColumnMap};
pub use split::{leave_one_out_split, leave_one_out_split_with, HoldoutRule};
pub use synth::{synthesize_cascade, SynthConfig};

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered behavior names, lowest level first; the last entry is the target
/// behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct BehaviorSchema {
    names: Vec<String>,
}

impl BehaviorSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("behavior schema needs at least one name".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate behavior name `{name}`")));
            }
        }
        Ok(BehaviorSchema { names })
    }

    pub fn num_behaviors(&self) -> usize {
        self.names.len()
    }

    pub fn target_index(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, level: usize) -> &str {
        &self.names[level]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for BehaviorSchema {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        BehaviorSchema::new(names)
    }
}

impl From<BehaviorSchema> for Vec<String> {
    fn from(schema: BehaviorSchema) -> Self {
        schema.names
    }
}

/// Bijection between raw string keys and dense indices 0..len-1, in
/// first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct KeyIndex {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl KeyIndex {
    pub fn new() -> Self {
        KeyIndex {
            keys: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert_or_get(&mut self, key: &str) -> u32 {
        if let Some(&idx) = self.index.get(key) {
            return idx;
        }
        let idx = self.keys.len() as u32;
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), idx);
        idx
    }

    pub fn index_of(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, idx: u32) -> &str {
        &self.keys[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}

impl Default for KeyIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for KeyIndex {
    fn from(keys: Vec<String>) -> Self {
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as u32))
            .collect();
        KeyIndex { keys, index }
    }
}

impl From<KeyIndex> for Vec<String> {
    fn from(ki: KeyIndex) -> Self {
        ki.keys
    }
}

/// The observed (user, item) pairs of one behavior level.
///
/// Pairs are stored in the canonical (user asc, item asc) order with an
/// optional parallel timestamp list, plus a hash set for expected-O(1)
/// membership and per-user item lists for sampling and evaluation.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    pairs: Vec<(u32, u32)>,
    timestamps: Option<Vec<i64>>,
    lookup: HashSet<(u32, u32)>,
    by_user: Vec<Vec<u32>>,
}

impl InteractionSet {
    /// Builds from possibly-duplicated timestamped entries, collapsing
    /// duplicates of a pair to the earliest timestamp.
    pub fn from_timestamped(entries: Vec<(u32, u32, i64)>, num_users: usize) -> Self {
        let mut earliest: HashMap<(u32, u32), i64> = HashMap::with_capacity(entries.len());
        for (u, i, ts) in entries {
            earliest
                .entry((u, i))
                .and_modify(|t| *t = (*t).min(ts))
                .or_insert(ts);
        }
        let mut pairs: Vec<((u32, u32), i64)> = earliest.into_iter().collect();
        pairs.sort_unstable_by_key(|&(p, _)| p);
        let timestamps = pairs.iter().map(|&(_, ts)| ts).collect();
        let pairs: Vec<(u32, u32)> = pairs.into_iter().map(|(p, _)| p).collect();
        Self::assemble(pairs, Some(timestamps), num_users)
    }

    /// Builds from possibly-duplicated plain entries.
    pub fn from_pairs(entries: Vec<(u32, u32)>, num_users: usize) -> Self {
        let mut pairs: Vec<(u32, u32)> = entries;
        pairs.sort_unstable();
        pairs.dedup();
        Self::assemble(pairs, None, num_users)
    }

    fn assemble(pairs: Vec<(u32, u32)>, timestamps: Option<Vec<i64>>, num_users: usize) -> Self {
        let lookup: HashSet<(u32, u32)> = pairs.iter().copied().collect();
        let mut by_user = vec![Vec::new(); num_users];
        for &(u, i) in &pairs {
            by_user[u as usize].push(i);
        }
        InteractionSet {
            pairs,
            timestamps,
            lookup,
            by_user,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.lookup.contains(&(user, item))
    }

    /// Pairs in canonical (user, item) ascending order.
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn pair_at(&self, idx: usize) -> (u32, u32) {
        self.pairs[idx]
    }

    pub fn has_timestamps(&self) -> bool {
        self.timestamps.is_some()
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    /// Items the user interacted with at this level, ascending.
    pub fn items_of(&self, user: u32) -> &[u32] {
        &self.by_user[user as usize]
    }

    fn entries(&self) -> impl Iterator<Item = (u32, u32, Option<i64>)> + '_ {
        self.pairs.iter().enumerate().map(move |(k, &(u, i))| {
            (u, i, self.timestamps.as_ref().map(|ts| ts[k]))
        })
    }
}

impl PartialEq for InteractionSet {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs && self.timestamps == other.timestamps
    }
}

impl Eq for InteractionSet {}

/// A complete multi-behavior dataset: schema, key bijections, and one
/// interaction set per behavior level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct BehaviorDataset {
    schema: BehaviorSchema,
    users: KeyIndex,
    items: KeyIndex,
    behaviors: Vec<InteractionSet>,
}

impl BehaviorDataset {
    pub fn new(
        schema: BehaviorSchema,
        users: KeyIndex,
        items: KeyIndex,
        behaviors: Vec<InteractionSet>,
    ) -> Result<Self> {
        if behaviors.len() != schema.num_behaviors() {
            return Err(Error::Config(format!(
                "{} interaction sets for {} behaviors",
                behaviors.len(),
                schema.num_behaviors()
            )));
        }
        let (m, n) = (users.len() as u32, items.len() as u32);
        for (r, set) in behaviors.iter().enumerate() {
            for &(u, i) in set.pairs() {
                if u >= m || i >= n {
                    return Err(Error::IndexOutOfRange(format!(
                        "pair ({u},{i}) at behavior {r} exceeds {m} users / {n} items"
                    )));
                }
            }
        }
        Ok(BehaviorDataset {
            schema,
            users,
            items,
            behaviors,
        })
    }

    pub fn schema(&self) -> &BehaviorSchema {
        &self.schema
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &KeyIndex {
        &self.users
    }

    pub fn items(&self) -> &KeyIndex {
        &self.items
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn behavior(&self, level: usize) -> &InteractionSet {
        &self.behaviors[level]
    }

    pub fn behaviors(&self) -> &[InteractionSet] {
        &self.behaviors
    }

    /// The target behavior's interaction set (highest level).
    pub fn target(&self) -> &InteractionSet {
        &self.behaviors[self.schema.target_index()]
    }

    /// Number of distinct (user, item) pairs observed at any of the given
    /// levels.
    pub fn distinct_pairs(&self, levels: &[usize]) -> usize {
        if levels.len() == 1 {
            return self.behaviors[levels[0]].len();
        }
        let mut seen = HashSet::new();
        for &r in levels {
            seen.extend(self.behaviors[r].pairs().iter().copied());
        }
        seen.len()
    }

    /// Levels at which the pair is observed, ascending.
    pub fn levels_of(&self, user: u32, item: u32) -> Vec<usize> {
        (0..self.behaviors.len())
            .filter(|&r| self.behaviors[r].contains(user, item))
            .collect()
    }

    /// Highest level at which (user, item) is observed; None if unobserved.
    pub fn max_level_of(&self, user: u32, item: u32) -> Option<usize> {
        (0..self.behaviors.len())
            .rev()
            .find(|&r| self.behaviors[r].contains(user, item))
    }

    /// Number of distinct behavior levels in which the user appears.
    pub fn user_behavior_count(&self, user: u32) -> usize {
        self.behaviors
            .iter()
            .filter(|set| !set.items_of(user).is_empty())
            .count()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            num_users: self.num_users(),
            num_items: self.num_items(),
            per_behavior_counts: self
                .schema
                .names()
                .iter()
                .zip(&self.behaviors)
                .map(|(name, set)| (name.clone(), set.len()))
                .collect(),
        }
    }

    /// A dataset containing only the target behavior (used by single-behavior
    /// baselines). Users and items keep their indices.
    pub fn target_only(&self) -> BehaviorDataset {
        let schema = BehaviorSchema::new(vec![self.schema.name(self.schema.target_index()).to_string()])
            .expect("single behavior name is valid");
        BehaviorDataset {
            schema,
            users: self.users.clone(),
            items: self.items.clone(),
            behaviors: vec![self.target().clone()],
        }
    }
}

/// Serialized form of [`BehaviorDataset`]; lookup structures are rebuilt on
/// load and invariants re-validated.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetRepr {
    schema: BehaviorSchema,
    users: KeyIndex,
    items: KeyIndex,
    behaviors: Vec<InteractionsRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InteractionsRepr {
    pairs: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<i64>>,
}

impl From<BehaviorDataset> for DatasetRepr {
    fn from(ds: BehaviorDataset) -> Self {
        DatasetRepr {
            schema: ds.schema,
            users: ds.users,
            items: ds.items,
            behaviors: ds
                .behaviors
                .into_iter()
                .map(|set| InteractionsRepr {
                    pairs: set.pairs,
                    timestamps: set.timestamps,
                })
                .collect(),
        }
    }
}

impl TryFrom<DatasetRepr> for BehaviorDataset {
    type Error = Error;

    fn try_from(repr: DatasetRepr) -> Result<Self> {
        let num_users = repr.users.len();
        let behaviors = repr
            .behaviors
            .into_iter()
            .map(|raw| {
                if let Some(ts) = &raw.timestamps {
                    if ts.len() != raw.pairs.len() {
                        return Err(Error::Config(
                            "timestamp list length does not match pair list".into(),
                        ));
                    }
                }
                let mut sorted = raw.pairs.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != raw.pairs.len() || sorted != raw.pairs {
                    return Err(Error::Config(
                        "interaction pairs must be unique and sorted".into(),
                    ));
                }
                Ok(InteractionSet::assemble(raw.pairs, raw.timestamps, num_users))
            })
            .collect::<Result<Vec<_>>>()?;
        BehaviorDataset::new(repr.schema, repr.users, repr.items, behaviors)
    }
}

/// Counts emitted as the dataset summary JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_users: usize,
    pub num_items: usize,
    pub per_behavior_counts: BTreeMap<String, usize>,
}

/// A train dataset plus one held-out target-behavior item per eligible user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: BehaviorDataset,
    /// user index → held-out item index; only users that had at least two
    /// target-behavior interactions before splitting appear here.
    pub test_items: BTreeMap<u32, u32>,
}

/// Retains only users having interactions in at least two distinct behavior
/// levels, then drops items left without any interaction. Both sides are
/// re-indexed densely in their original order; keys are preserved.
pub fn filter_multi_behavior_users(ds: &BehaviorDataset) -> Result<BehaviorDataset> {
    let keep: Vec<u32> = (0..ds.num_users() as u32)
        .filter(|&u| ds.user_behavior_count(u) >= 2)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    let mut user_map = vec![u32::MAX; ds.num_users()];
    let mut users = KeyIndex::new();
    for &u in &keep {
        user_map[u as usize] = users.insert_or_get(ds.users.key(u));
    }

    let mut item_used = vec![false; ds.num_items()];
    for set in &ds.behaviors {
        for &(u, i) in set.pairs() {
            if user_map[u as usize] != u32::MAX {
                item_used[i as usize] = true;
            }
        }
    }
    let mut item_map = vec![u32::MAX; ds.num_items()];
    let mut items = KeyIndex::new();
    for (i, &used) in item_used.iter().enumerate() {
        if used {
            item_map[i] = items.insert_or_get(ds.items.key(i as u32));
        }
    }

    let num_users = users.len();
    let behaviors = ds
        .behaviors
        .iter()
        .map(|set| {
            let remap = |&(u, i, ts): &(u32, u32, Option<i64>)| {
                let nu = user_map[u as usize];
                (nu != u32::MAX).then(|| (nu, item_map[i as usize], ts))
            };
            let kept: Vec<_> = set.entries().collect();
            let kept: Vec<_> = kept.iter().filter_map(remap).collect();
            if set.has_timestamps() {
                InteractionSet::from_timestamped(
                    kept.into_iter().map(|(u, i, ts)| (u, i, ts.unwrap())).collect(),
                    num_users,
                )
            } else {
                InteractionSet::from_pairs(
                    kept.into_iter().map(|(u, i, _)| (u, i)).collect(),
                    num_users,
                )
            }
        })
        .collect();
    BehaviorDataset::new(ds.schema.clone(), users, items, behaviors)
}


#[cfg(test)]
mod tests {
    use super::testutil::dataset_from_pairs;
    use super::*;

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(BehaviorSchema::new(vec![]).is_err());
        assert!(BehaviorSchema::new(vec!["view".into(), "view".into()]).is_err());
        let s = BehaviorSchema::new(vec!["view".into(), "buy".into()]).unwrap();
        assert_eq!(s.target_index(), 1);
        assert_eq!(s.index_of("buy"), Some(1));
        assert_eq!(s.index_of("cart"), None);
    }

    #[test]
    fn key_index_is_inverse_consistent() {
        let mut ki = KeyIndex::new();
        for key in ["alpha", "beta", "alpha", "gamma"] {
            ki.insert_or_get(key);
        }
        assert_eq!(ki.len(), 3);
        for idx in 0..ki.len() as u32 {
            assert_eq!(ki.index_of(ki.key(idx)), Some(idx));
        }
    }

    #[test]
    fn interaction_set_dedups_to_earliest_timestamp() {
        let set = InteractionSet::from_timestamped(vec![(0, 1, 9), (0, 1, 5), (0, 2, 3)], 1);
        assert_eq!(set.len(), 2);
        assert_eq!(set.pairs(), &[(0, 1), (0, 2)]);
        assert_eq!(set.timestamps().unwrap(), &[5, 3]);
        assert!(set.contains(0, 1));
        assert!(!set.contains(1, 1));
    }

    #[test]
    fn filter_keeps_only_multi_behavior_users() {
        // A(view only), B(view+buy), C(buy only) → exactly {B}
        let ds = dataset_from_pairs(
            &["view", "buy"],
            3,
            2,
            &[&[(0, 0), (1, 0)], &[(1, 1), (2, 0)]],
        );
        let filtered = filter_multi_behavior_users(&ds).unwrap();
        assert_eq!(filtered.num_users(), 1);
        assert_eq!(filtered.users().key(0), "u1");
        // Items 0 and 1 both survive through B's interactions.
        assert_eq!(filtered.num_items(), 2);
        assert_eq!(filtered.behavior(0).pairs(), &[(0, 0)]);
        assert_eq!(filtered.behavior(1).pairs(), &[(0, 1)]);
    }

    #[test]
    fn filter_drops_orphaned_items_and_reindexes() {
        let ds = dataset_from_pairs(
            &["view", "buy"],
            2,
            3,
            // user 0 only views item 0; user 1 views+buys item 2
            &[&[(0, 0), (1, 2)], &[(1, 2)]],
        );
        let filtered = filter_multi_behavior_users(&ds).unwrap();
        assert_eq!(filtered.num_users(), 1);
        assert_eq!(filtered.num_items(), 1);
        assert_eq!(filtered.items().key(0), "i2");
    }

    #[test]
    fn filter_error_when_nothing_survives() {
        let ds = dataset_from_pairs(&["view", "buy"], 1, 1, &[&[(0, 0)], &[]]);
        assert!(matches!(
            filter_multi_behavior_users(&ds),
            Err(Error::EmptyAfterFiltering)
        ));
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = dataset_from_pairs(&["view", "buy"], 3, 3, &[&[(0, 0), (1, 2)], &[(1, 2)]]);
        let json = serde_json::to_string(&ds).unwrap();
        let back: BehaviorDataset = serde_json::from_str(&json).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn corrupted_serialized_pairs_are_rejected() {
        let ds = dataset_from_pairs(&["view"], 2, 2, &[&[(0, 0), (1, 1)]]);
        let mut value = serde_json::to_value(&ds).unwrap();
        value["behaviors"][0]["pairs"] = serde_json::json!([[1, 1], [0, 0]]);
        assert!(serde_json::from_value::<BehaviorDataset>(value.clone()).is_err());
        value["behaviors"][0]["pairs"] = serde_json::json!([[0, 0], [9, 9]]);
        assert!(serde_json::from_value::<BehaviorDataset>(value).is_err());
    }

    #[test]
    fn levels_and_max_level() {
        let ds = dataset_from_pairs(&["view", "cart", "buy"], 1, 2, &[
            &[(0, 0), (0, 1)],
            &[(0, 0)],
            &[(0, 0)],
        ]);
        assert_eq!(ds.levels_of(0, 0), vec![0, 1, 2]);
        assert_eq!(ds.levels_of(0, 1), vec![0]);
        assert_eq!(ds.max_level_of(0, 0), Some(2));
        assert_eq!(ds.max_level_of(0, 1), Some(0));
        assert_eq!(ds.max_level_of(0, 5), None);
        assert_eq!(ds.distinct_pairs(&[0, 1, 2]), 2);
    }
}
