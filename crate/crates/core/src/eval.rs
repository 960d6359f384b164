//! Leave-one-out all-item ranking evaluation: each test user's held-out item
//! is ranked against every item the user has not interacted with during
//! training, and HR@K / NDCG@K are averaged over users, optionally broken
//! down by user sparsity group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{sparsity_groups, CountRange, SplitDataset};
use crate::error::{Error, Result};
use crate::model::NmtrModel;

/// Scores one (user, item) pair; higher means ranked earlier. Implementations
/// must be pure so evaluation can shard by user.
pub trait Scorer {
    fn score(&self, user: u32, item: u32) -> f64;
}

impl Scorer for NmtrModel {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.predict_target(user, item)
            .expect("evaluation indices are validated against the split")
    }
}

impl<F: Fn(u32, u32) -> f64> Scorer for F {
    fn score(&self, user: u32, item: u32) -> f64 {
        self(user, item)
    }
}

/// Which training interactions are removed from a user's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionScope {
    /// Exclude only the user's train-time target-behavior items; items seen
    /// only under lower-level behaviors stay in the ranking universe.
    TargetBehavior,
    /// Exclude items the user touched under any behavior level.
    AnyBehavior,
}

impl Default for ExclusionScope {
    fn default() -> Self {
        ExclusionScope::TargetBehavior
    }
}

/// 1-based rank of one user's held-out item among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user: u32,
    pub rank: usize,
    pub candidates: usize,
}

/// Ranks the user's held-out test item against all items the user has not
/// interacted with in training (per `scope`), the test item included. The
/// rank is 1 plus the number of candidates scoring strictly higher, with
/// ties resolved toward the smaller item index.
pub fn rank_test_item<S: Scorer + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    user: u32,
    scope: ExclusionScope,
) -> Result<RankResult> {
    let &test_item = split
        .test_items
        .get(&user)
        .ok_or(Error::NoTestItem(user))?;
    let excluded = excluded_items(split, user, scope);
    let num_items = split.train.num_items() as u32;
    let test_score = scorer.score(user, test_item);
    let mut above = 0usize;
    let mut candidates = 1usize;
    for item in 0..num_items {
        if item == test_item || excluded.binary_search(&item).is_ok() {
            continue;
        }
        candidates += 1;
        let s = scorer.score(user, item);
        if s > test_score || (s == test_score && item < test_item) {
            above += 1;
        }
    }
    Ok(RankResult {
        user,
        rank: above + 1,
        candidates,
    })
}

fn excluded_items(split: &SplitDataset, user: u32, scope: ExclusionScope) -> Vec<u32> {
    match scope {
        ExclusionScope::TargetBehavior => split.train.target().items_of(user).to_vec(),
        ExclusionScope::AnyBehavior => {
            let mut items: Vec<u32> = split
                .train
                .behaviors()
                .iter()
                .flat_map(|set| set.items_of(user).iter().copied())
                .collect();
            items.sort_unstable();
            items.dedup();
            items
        }
    }
}

/// Fraction of users whose held-out item lands in the top K.
pub fn hit_ratio(ranks: &[RankResult], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let hits = ranks.iter().filter(|r| r.rank <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean positional gain 1/log2(rank+1) for hits within the top K; with a
/// single relevant item the ideal DCG is 1, so this is already normalized.
pub fn ndcg(ranks: &[RankResult], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let gain: f64 = ranks
        .iter()
        .map(|r| {
            if r.rank <= k {
                1.0 / ((r.rank + 1) as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    Ok(gain / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub users: usize,
    pub metrics: Vec<KMetrics>,
}

/// Metrics per cutoff for all test users, with optional per-sparsity-group
/// sub-reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub users: usize,
    pub metrics: Vec<KMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, GroupMetrics>>,
}

pub const DEFAULT_KS: [usize; 4] = [50, 80, 100, 200];

/// Ranks every test user and aggregates HR@K and NDCG@K, overall and per
/// sparsity group when bounds are given. Group membership is decided by the
/// user's train-set target-behavior count.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    ks: &[usize],
    groups: Option<&[CountRange]>,
    scope: ExclusionScope,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(Error::Config("cutoff list must be non-empty positive".into()));
    }
    let mut ranks = Vec::with_capacity(split.test_items.len());
    for &user in split.test_items.keys() {
        ranks.push(rank_test_item(scorer, split, user, scope)?);
    }
    let metrics = metrics_for(&ranks, ks)?;

    let groups = match groups {
        None => None,
        Some(bounds) => {
            let assignment = sparsity_groups(&split.train, bounds)?;
            let mut out = BTreeMap::new();
            for (label, users) in assignment {
                let subset: Vec<RankResult> = ranks
                    .iter()
                    .filter(|r| users.binary_search(&r.user).is_ok())
                    .copied()
                    .collect();
                let metrics = if subset.is_empty() {
                    ks.iter().map(|&k| KMetrics { k, hr: 0.0, ndcg: 0.0 }).collect()
                } else {
                    metrics_for(&subset, ks)?
                };
                out.insert(
                    label,
                    GroupMetrics {
                        users: subset.len(),
                        metrics,
                    },
                );
            }
            Some(out)
        }
    };

    Ok(EvalReport {
        users: ranks.len(),
        metrics,
        groups,
    })
}

fn metrics_for(ranks: &[RankResult], ks: &[usize]) -> Result<Vec<KMetrics>> {
    ks.iter()
        .map(|&k| {
            Ok(KMetrics {
                k,
                hr: hit_ratio(ranks, k)?,
                ndcg: ndcg(ranks, k)?,
            })
        })
        .collect()
}

/// Renders the report into the flat CSV layout `model,K,HR,NDCG,group`;
/// overall rows carry group `all`.
pub fn report_to_csv(report: &EvalReport, model: &str) -> String {
    let mut out = String::from("model,K,HR,NDCG,group\n");
    for m in &report.metrics {
        out.push_str(&format!("{model},{},{},{},all\n", m.k, m.hr, m.ndcg));
    }
    if let Some(groups) = &report.groups {
        for (label, gm) in groups {
            for m in &gm.metrics {
                out.push_str(&format!("{model},{},{},{},{label}\n", m.k, m.hr, m.ndcg));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::data::testutil::dataset_from_pairs;
    use crate::data::leave_one_out_split;

    use super::*;

    fn ranks(rs: &[usize]) -> Vec<RankResult> {
        rs.iter()
            .map(|&rank| RankResult {
                user: 0,
                rank,
                candidates: 1000,
            })
            .collect()
    }

    #[test]
    fn hit_ratio_hand_values() {
        assert_eq!(hit_ratio(&ranks(&[1, 2, 3]), 5).unwrap(), 1.0);
        assert_eq!(hit_ratio(&ranks(&[6]), 5).unwrap(), 0.0);
        let hr = hit_ratio(&ranks(&[1, 7, 12]), 10).unwrap();
        assert!((hr - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_hand_values() {
        assert_eq!(ndcg(&ranks(&[1]), 5).unwrap(), 1.0);
        assert_eq!(ndcg(&ranks(&[3]), 5).unwrap(), 0.5);
        let v = ndcg(&ranks(&[1, 3]), 10).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_rank_lists_error() {
        assert!(hit_ratio(&[], 5).is_err());
        assert!(ndcg(&[], 5).is_err());
    }

    #[test]
    fn ndcg_bounded_by_hit_ratio_and_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rs: Vec<RankResult> = (0..200)
            .map(|u| RankResult {
                user: u,
                rank: rng.gen_range(1..=500),
                candidates: 500,
            })
            .collect();
        let mut prev_hr = 0.0;
        let mut prev_ndcg = 0.0;
        for k in [1, 5, 10, 50, 100, 250, 500] {
            let hr = hit_ratio(&rs, k).unwrap();
            let nd = ndcg(&rs, k).unwrap();
            assert!(nd <= hr + 1e-15, "NDCG@{k} exceeded HR@{k}");
            assert!(hr + 1e-15 >= prev_hr && nd + 1e-15 >= prev_ndcg);
            prev_hr = hr;
            prev_ndcg = nd;
        }
    }

    fn two_user_split() -> SplitDataset {
        // Users 0/1 with two target items each; lower level adds extra noise.
        let ds = dataset_from_pairs(
            &["view", "buy"],
            2,
            6,
            &[&[(0, 0), (0, 5), (1, 1)], &[(0, 0), (0, 2), (1, 1), (1, 3)]],
        );
        leave_one_out_split(&ds, 3).unwrap()
    }

    #[test]
    fn perfect_oracle_scores_one_everywhere() {
        let split = two_user_split();
        let test_items = split.test_items.clone();
        let oracle = move |u: u32, i: u32| {
            if test_items.get(&u) == Some(&i) {
                1.0
            } else {
                0.0
            }
        };
        let report = evaluate(&oracle, &split, &[1, 5], None, ExclusionScope::TargetBehavior)
            .unwrap();
        for m in report.metrics {
            assert_eq!(m.hr, 1.0);
            assert_eq!(m.ndcg, 1.0);
        }
    }

    #[test]
    fn constant_scores_rank_by_ascending_index() {
        let split = two_user_split();
        let flat = |_: u32, _: u32| 0.25;
        for (&u, &t) in &split.test_items {
            let r = rank_test_item(&flat, &split, u, ExclusionScope::TargetBehavior).unwrap();
            // Rank equals 1 + number of non-excluded candidates below the
            // test item's index.
            let excluded = split.train.target().items_of(u);
            let below = (0..t)
                .filter(|i| !excluded.contains(i))
                .count();
            assert_eq!(r.rank, below + 1);
        }
    }

    #[test]
    fn exclusion_scope_controls_the_candidate_universe() {
        let split = two_user_split();
        let flat = |_: u32, _: u32| 0.0;
        let u = *split.test_items.keys().next().unwrap();
        let narrow = rank_test_item(&flat, &split, u, ExclusionScope::TargetBehavior).unwrap();
        let wide = rank_test_item(&flat, &split, u, ExclusionScope::AnyBehavior).unwrap();
        assert!(wide.candidates <= narrow.candidates);
    }

    #[test]
    fn missing_test_user_errors() {
        let split = two_user_split();
        let flat = |_: u32, _: u32| 0.0;
        assert!(matches!(
            rank_test_item(&flat, &split, 99, ExclusionScope::TargetBehavior),
            Err(Error::NoTestItem(99))
        ));
    }

    /// Rank computed by strictly-above counting must equal the position in a
    /// brute-force stable sort of all candidates.
    #[test]
    fn rank_matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let num_items = rng.gen_range(5..40u32);
            let target: Vec<(u32, u32)> = (0..num_items)
                .filter(|_| rng.gen::<f64>() < 0.3)
                .map(|i| (0, i))
                .collect();
            if target.len() < 2 {
                continue;
            }
            let ds = dataset_from_pairs(
                &["buy"],
                1,
                num_items as usize,
                &[&target],
            );
            let split = leave_one_out_split(&ds, trial).unwrap();
            if split.test_items.is_empty() {
                continue;
            }
            // Quantized scores force plenty of ties.
            let seed = rng.gen::<u64>();
            let scorer = move |u: u32, i: u32| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ ((u as u64) << 32) ^ i as u64);
                (r.gen_range(0..5) as f64) / 4.0
            };
            let u = 0u32;
            let t = split.test_items[&u];
            let got = rank_test_item(&scorer, &split, u, ExclusionScope::TargetBehavior)
                .unwrap();

            let excluded = split.train.target().items_of(u).to_vec();
            let mut cands: Vec<u32> = (0..num_items)
                .filter(|i| !excluded.contains(i) || *i == t)
                .collect();
            cands.sort_by(|&a, &b| {
                scorer(u, b)
                    .total_cmp(&scorer(u, a))
                    .then(a.cmp(&b))
            });
            let brute = cands.iter().position(|&i| i == t).unwrap() + 1;
            assert_eq!(got.rank, brute, "trial {trial}");
            assert_eq!(got.candidates, cands.len());
        }
    }

    #[test]
    fn random_scores_hit_at_roughly_k_over_n() {
        // 1000 users, 100 candidate items each, K=10 → HR ≈ 0.1.
        let mut target = Vec::new();
        for u in 0..1000u32 {
            target.push((u, u % 100));
            target.push((u, (u + 37) % 100));
        }
        let ds = dataset_from_pairs(&["buy"], 1000, 100, &[&target]);
        let split = leave_one_out_split(&ds, 5).unwrap();
        let scorer = |u: u32, i: u32| {
            let mut r = ChaCha8Rng::seed_from_u64(0xfeed ^ ((u as u64) << 32) ^ i as u64);
            r.gen::<f64>()
        };
        let report = evaluate(&scorer, &split, &[10], None, ExclusionScope::TargetBehavior)
            .unwrap();
        assert_eq!(report.users, 1000);
        let hr = report.metrics[0].hr;
        // 99 candidates per user (one target item stays in train).
        assert!((hr - 0.1).abs() < 0.05, "HR@10 = {hr}");
    }

    #[test]
    fn grouped_report_contains_all_declared_groups() {
        let split = two_user_split();
        let flat = |_: u32, _: u32| 0.0;
        let bounds: Vec<CountRange> = vec!["1-1".parse().unwrap(), "2-9".parse().unwrap()];
        let report = evaluate(&flat, &split, &[2], Some(&bounds), ExclusionScope::TargetBehavior)
            .unwrap();
        let groups = report.groups.unwrap();
        assert_eq!(groups.len(), 2);
        let total: usize = groups.values().map(|g| g.users).sum();
        assert_eq!(total, report.users);
        let csv = report_to_csv(&report, "demo");
        assert!(csv.lines().count() >= 4);
        assert!(csv.starts_with("model,K,HR,NDCG,group"));
    }
}
