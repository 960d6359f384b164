use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{BehaviorDataset, InteractionSet, SplitDataset};

/// How the held-out target interaction is chosen per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldoutRule {
    /// Latest timestamp when the target set carries timestamps, else a
    /// uniform draw from the seeded generator. This is the default protocol.
    PreferLatest,
    /// Always a uniform draw, even when timestamps are present.
    UniformRandom,
}

/// Leave-one-out split: for every user with at least two target-behavior
/// interactions, removes exactly one of them from the target behavior only
/// (lower levels keep their entries for that pair) and records it as the
/// user's test item. Users below the threshold contribute no test item and
/// keep all interactions. Deterministic given the seed.
pub fn leave_one_out_split(ds: &BehaviorDataset, rng_seed: u64) -> Result<SplitDataset> {
    leave_one_out_split_with(ds, rng_seed, HoldoutRule::PreferLatest)
}

pub fn leave_one_out_split_with(
    ds: &BehaviorDataset,
    rng_seed: u64,
    rule: HoldoutRule,
) -> Result<SplitDataset> {
    let target_level = ds.schema().target_index();
    let target = ds.behavior(target_level);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let use_timestamps = target.has_timestamps() && rule == HoldoutRule::PreferLatest;

    let mut test_items: BTreeMap<u32, u32> = BTreeMap::new();
    for u in 0..ds.num_users() as u32 {
        let items = target.items_of(u);
        if items.len() < 2 {
            continue;
        }
        let held = if use_timestamps {
            // Latest timestamp; ties broken toward the larger item index so
            // the choice is deterministic.
            let ts = target.timestamps().expect("timestamps checked above");
            let pairs = target.pairs();
            let mut best: Option<(i64, u32)> = None;
            for &i in items {
                let k = pairs.binary_search(&(u, i)).expect("item listed for user");
                let cand = (ts[k], i);
                if best.map_or(true, |b| cand > b) {
                    best = Some(cand);
                }
            }
            best.expect("user has items").1
        } else {
            items[rng.gen_range(0..items.len())]
        };
        test_items.insert(u, held);
    }

    let held_lookup = &test_items;
    let num_users = ds.num_users();
    let mut behaviors = Vec::with_capacity(ds.num_behaviors());
    for (level, set) in ds.behaviors().iter().enumerate() {
        if level != target_level {
            behaviors.push(set.clone());
            continue;
        }
        let keep = |&(u, i): &(u32, u32)| held_lookup.get(&u) != Some(&i);
        let reduced = if let Some(ts) = set.timestamps() {
            InteractionSet::from_timestamped(
                set.pairs()
                    .iter()
                    .zip(ts)
                    .filter(|(p, _)| keep(p))
                    .map(|(&(u, i), &t)| (u, i, t))
                    .collect(),
                num_users,
            )
        } else {
            InteractionSet::from_pairs(
                set.pairs().iter().filter(|p| keep(p)).copied().collect(),
                num_users,
            )
        };
        behaviors.push(reduced);
    }

    let train = BehaviorDataset::new(
        ds.schema().clone(),
        ds.users().clone(),
        ds.items().clone(),
        behaviors,
    )?;
    Ok(SplitDataset { train, test_items })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::dataset_from_pairs;
    use super::super::{BehaviorSchema, KeyIndex};
    use super::*;

    #[test]
    fn held_pair_partitions_the_target_set() {
        let ds = dataset_from_pairs(&["view", "buy"], 1, 8, &[
            &[(0, 3), (0, 7)],
            &[(0, 3), (0, 7)],
        ]);
        let split = leave_one_out_split(&ds, 11).unwrap();
        let held = split.test_items[&0];
        assert!(held == 3 || held == 7);
        let kept = if held == 3 { 7 } else { 3 };
        assert!(split.train.target().contains(0, kept));
        assert!(!split.train.target().contains(0, held));
        // Lower level keeps both entries for the pair.
        assert!(split.train.behavior(0).contains(0, held));
    }

    #[test]
    fn single_target_interaction_stays_in_train() {
        let ds = dataset_from_pairs(&["view", "buy"], 1, 4, &[&[(0, 0)], &[(0, 2)]]);
        let split = leave_one_out_split(&ds, 5).unwrap();
        assert!(split.test_items.is_empty());
        assert!(split.train.target().contains(0, 2));
    }

    #[test]
    fn counts_for_ten_users_with_five_items_each() {
        let mut target = Vec::new();
        for u in 0..10u32 {
            for i in 0..5u32 {
                target.push((u, i));
            }
        }
        let view = target.clone();
        let ds = dataset_from_pairs(&["view", "buy"], 10, 5, &[&view, &target]);
        let split = leave_one_out_split(&ds, 99).unwrap();
        assert_eq!(split.test_items.len(), 10);
        assert_eq!(split.train.target().len(), 40);
    }

    #[test]
    fn latest_timestamp_is_held_out_when_present() {
        let schema = BehaviorSchema::new(vec!["buy".into()]).unwrap();
        let mut users = KeyIndex::new();
        users.insert_or_get("u0");
        let mut items = KeyIndex::new();
        for i in 0..3 {
            items.insert_or_get(&format!("i{i}"));
        }
        let set = InteractionSet::from_timestamped(vec![(0, 0, 50), (0, 1, 90), (0, 2, 10)], 1);
        let ds = BehaviorDataset::new(schema, users, items, vec![set]).unwrap();
        let split = leave_one_out_split(&ds, 0).unwrap();
        assert_eq!(split.test_items[&0], 1);

        let random = leave_one_out_split_with(&ds, 0, HoldoutRule::UniformRandom).unwrap();
        assert!(random.test_items.contains_key(&0));
    }

    #[test]
    fn split_is_deterministic_given_seed() {
        let mut target = Vec::new();
        for u in 0..20u32 {
            for i in 0..6u32 {
                target.push((u, (u + i) % 12));
            }
        }
        let ds = dataset_from_pairs(&["view", "buy"], 20, 12, &[&target.clone(), &target]);
        let a = leave_one_out_split(&ds, 7).unwrap();
        let b = leave_one_out_split(&ds, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_soundness_over_random_dataset() {
        let mut target = Vec::new();
        for u in 0..30u32 {
            for k in 0..4u32 {
                target.push((u, (u * 3 + k * 5) % 17));
            }
        }
        let ds = dataset_from_pairs(&["view", "buy"], 30, 17, &[&target.clone(), &target]);
        let split = leave_one_out_split(&ds, 42).unwrap();
        for (&u, &i) in &split.test_items {
            assert!(!split.train.target().contains(u, i));
            assert!(ds.target().contains(u, i));
        }
    }
}
