use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BehaviorDataset;
use crate::error::{Error, Result};
use crate::kernel::{Optimizer, Parameterized};
use crate::model::ModelConfig;
use crate::train::{EpochStats, LossTrace, TrainConfig};
use crate::units::UnitKind;

use super::bpr::{pairwise_backward, Comparison};
use super::SingleBehaviorModel;

const UNOBSERVED_RETRIES: u32 = 100;

/// Sampling distribution for multi-channel pairwise training.
///
/// Positives are drawn from observed interactions with one weight per
/// behavior level. Negatives come from strata keyed by the item's highest
/// observed level for that user: index s < R−1 selects items whose highest
/// level is s (strictly below the positive's level), and the last index
/// selects never-interacted items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSamplingDist {
    pub positive_level_weights: Vec<f64>,
    pub negative_strata_weights: Vec<f64>,
}

impl McSamplingDist {
    /// Uniform positives over observed interactions and uniform strata.
    pub fn uniform(num_behaviors: usize) -> Self {
        McSamplingDist {
            positive_level_weights: vec![1.0; num_behaviors],
            negative_strata_weights: vec![1.0 / num_behaviors as f64; num_behaviors],
        }
    }

    pub fn validate(&self, num_behaviors: usize) -> Result<()> {
        if self.positive_level_weights.len() != num_behaviors
            || self.negative_strata_weights.len() != num_behaviors
        {
            return Err(Error::Config(format!(
                "sampling distribution must have {num_behaviors} entries per side"
            )));
        }
        let pos_ok = self
            .positive_level_weights
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
            && self.positive_level_weights.iter().sum::<f64>() > 0.0;
        if !pos_ok {
            return Err(Error::Config(
                "positive level weights must be non-negative with positive sum".into(),
            ));
        }
        let neg_sum: f64 = self.negative_strata_weights.iter().sum();
        let neg_ok = self
            .negative_strata_weights
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
            && (neg_sum - 1.0).abs() <= 1e-9;
        if !neg_ok {
            return Err(Error::Config(
                "negative strata weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// Draws level-aware pairwise comparisons: a positive at some observed level
/// and a negative whose highest observed level is strictly lower (or which
/// is unobserved), stratified per the distribution.
pub struct McSampler<'a> {
    ds: &'a BehaviorDataset,
    dist: McSamplingDist,
    /// Cumulative positive weights per level: w_ℓ · |Y_ℓ|.
    pos_thresholds: Vec<f64>,
    /// user → highest-level stratum s (0..R−2) → items, ascending.
    strata: Vec<Vec<Vec<u32>>>,
    /// user → number of items the user has interacted with at any level.
    covered: Vec<u32>,
    union_size: usize,
}

impl<'a> McSampler<'a> {
    pub fn new(ds: &'a BehaviorDataset, dist: McSamplingDist) -> Result<Self> {
        let r_levels = ds.num_behaviors();
        dist.validate(r_levels)?;
        let mut acc = 0.0;
        let pos_thresholds: Vec<f64> = (0..r_levels)
            .map(|r| {
                acc += dist.positive_level_weights[r] * ds.behavior(r).len() as f64;
                acc
            })
            .collect();
        if *pos_thresholds.last().expect("at least one level") <= 0.0 {
            return Err(Error::EmptyInput(
                "no observed interactions under the positive weights".into(),
            ));
        }

        // Bucket each user's items by their highest observed level; only
        // levels below the top one can ever serve as negatives.
        let mut strata = vec![vec![Vec::new(); r_levels.saturating_sub(1)]; ds.num_users()];
        let mut covered = vec![0u32; ds.num_users()];
        for u in 0..ds.num_users() as u32 {
            let mut seen: Vec<(u32, usize)> = Vec::new();
            for r in (0..r_levels).rev() {
                for &i in ds.behavior(r).items_of(u) {
                    if seen.iter().all(|&(j, _)| j != i) {
                        seen.push((i, r));
                    }
                }
            }
            covered[u as usize] = seen.len() as u32;
            for (i, max_level) in seen {
                if max_level < r_levels - 1 {
                    strata[u as usize][max_level].push(i);
                }
            }
            for bucket in &mut strata[u as usize] {
                bucket.sort_unstable();
            }
        }

        let levels: Vec<usize> = (0..r_levels).collect();
        Ok(McSampler {
            union_size: ds.distinct_pairs(&levels),
            ds,
            dist,
            pos_thresholds,
            strata,
            covered,
        })
    }

    /// Distinct observed pairs; one epoch draws this many comparisons.
    pub fn union_size(&self) -> usize {
        self.union_size
    }

    /// One comparison, or None when every admissible stratum for the drawn
    /// positive is empty (the user is skipped with a warning).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Option<Comparison>> {
        let total = *self.pos_thresholds.last().expect("levels");
        let x = rng.gen::<f64>() * total;
        let level = self
            .pos_thresholds
            .partition_point(|&t| t <= x)
            .min(self.pos_thresholds.len() - 1);
        let set = self.ds.behavior(level);
        let (user, pos_item) = set.pair_at(rng.gen_range(0..set.len()));

        // Admissible strata: observed strictly below the positive's level,
        // plus the unobserved stratum, each with positive weight and at
        // least one item.
        let r_levels = self.ds.num_behaviors();
        let unobserved_left =
            self.ds.num_items() as u32 - self.covered[user as usize];
        let mut options: Vec<(usize, f64)> = Vec::with_capacity(level + 1);
        for s in 0..level.min(r_levels - 1) {
            let w = self.dist.negative_strata_weights[s];
            if w > 0.0 && !self.strata[user as usize][s].is_empty() {
                options.push((s, w));
            }
        }
        let w_unobserved = self.dist.negative_strata_weights[r_levels - 1];
        if w_unobserved > 0.0 && unobserved_left > 0 {
            options.push((r_levels - 1, w_unobserved));
        }
        if options.is_empty() {
            log::warn!("user {user}: no admissible negative stratum below level {level}; skipped");
            return Ok(None);
        }

        let weight_sum: f64 = options.iter().map(|&(_, w)| w).sum();
        let mut draw = rng.gen::<f64>() * weight_sum;
        let mut chosen = options[options.len() - 1].0;
        for &(s, w) in &options {
            if draw < w {
                chosen = s;
                break;
            }
            draw -= w;
        }

        let neg_item = if chosen == r_levels - 1 {
            self.sample_unobserved(user, rng)
        } else {
            let bucket = &self.strata[user as usize][chosen];
            bucket[rng.gen_range(0..bucket.len())]
        };
        Ok(Some(Comparison {
            user,
            pos_item,
            neg_item,
        }))
    }

    fn sample_unobserved(&self, user: u32, rng: &mut ChaCha8Rng) -> u32 {
        let n = self.ds.num_items() as u32;
        for _ in 0..UNOBSERVED_RETRIES {
            let j = rng.gen_range(0..n);
            if self.ds.max_level_of(user, j).is_none() {
                return j;
            }
        }
        // Dense fallback: enumerate the complement exactly.
        let complement: Vec<u32> = (0..n)
            .filter(|&j| self.ds.max_level_of(user, j).is_none())
            .collect();
        complement[rng.gen_range(0..complement.len())]
    }
}

/// Multi-channel pairwise training: the wrapped predictor is plain MF when
/// `kind` is None, otherwise the given NCF unit. Positives are drawn
/// level-weighted from observed interactions; negatives come from strictly
/// lower strata or the unobserved pool per the distribution.
pub fn train_mc(
    ds: &BehaviorDataset,
    kind: Option<UnitKind>,
    dist: &McSamplingDist,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(SingleBehaviorModel, LossTrace)> {
    let model = match kind {
        None => SingleBehaviorModel::mf(
            ds.num_users(),
            ds.num_items(),
            model_config.embedding_size,
            model_config.seed,
        ),
        Some(kind) => {
            let mc = ModelConfig {
                unit: kind,
                ..model_config.clone()
            };
            SingleBehaviorModel::new(ds.num_users(), ds.num_items(), &mc)
        }
    };
    train_mc_model(model, ds, dist, config)
}

/// [`train_mc`] over a caller-supplied predictor.
pub fn train_mc_model(
    mut model: SingleBehaviorModel,
    ds: &BehaviorDataset,
    dist: &McSamplingDist,
    config: &TrainConfig,
) -> Result<(SingleBehaviorModel, LossTrace)> {
    model.set_l2(config.l2_embedding, config.l2_interaction);
    let sampler = McSampler::new(ds, dist.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut remaining = sampler.union_size();
        let mut total_loss = 0.0;
        let mut total_pairs = 0usize;
        while remaining > 0 {
            batch.clear();
            while batch.len() < config.batch_size && remaining > 0 {
                remaining -= 1;
                if let Some(cmp) = sampler.sample(&mut rng)? {
                    batch.push(cmp);
                }
            }
            if batch.is_empty() {
                continue;
            }
            let norm = batch.len() as f64;
            let loss = pairwise_backward(&mut model, &batch, norm)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            optimizer.step(&mut model.params_mut())?;
            total_loss += loss;
            total_pairs += batch.len();
        }
        trace.push(EpochStats {
            epoch,
            loss: total_loss / total_pairs.max(1) as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use crate::data::testutil::dataset_from_pairs;
    use crate::data::{synthesize_cascade, SynthConfig};
    use crate::eval::Scorer;

    use super::*;

    fn cascade_ds(seed: u64) -> BehaviorDataset {
        synthesize_cascade(&SynthConfig {
            num_users: 50,
            num_items: 40,
            num_behaviors: 3,
            funnel_probs: vec![0.5, 0.7, 0.7],
            rng_seed: seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn distribution_validation() {
        assert!(McSamplingDist::uniform(2).validate(2).is_ok());
        let bad = McSamplingDist {
            positive_level_weights: vec![1.0, 1.0],
            negative_strata_weights: vec![0.3, 0.3],
        };
        assert!(bad.validate(2).is_err());
        let bad = McSamplingDist {
            positive_level_weights: vec![0.0, 0.0],
            negative_strata_weights: vec![0.5, 0.5],
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn negatives_sit_strictly_below_their_positive() {
        let ds = cascade_ds(3);
        let sampler = McSampler::new(&ds, McSamplingDist::uniform(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut seen = 0;
        while seen < 10_000 {
            let Some(cmp) = sampler.sample(&mut rng).unwrap() else {
                continue;
            };
            let pos_level = ds
                .max_level_of(cmp.user, cmp.pos_item)
                .expect("positive is observed");
            match ds.max_level_of(cmp.user, cmp.neg_item) {
                None => {}
                Some(neg_level) => assert!(
                    neg_level < pos_level,
                    "negative at level {neg_level} vs positive at {pos_level}"
                ),
            }
            seen += 1;
        }
    }

    #[test]
    fn unobserved_only_distribution_matches_target_positives() {
        // dist = (0, 1): negatives only from never-interacted items; with
        // one-hot positive weights on the target this degenerates to BPR on
        // the target behavior.
        let ds = cascade_ds(4);
        let dist = McSamplingDist {
            positive_level_weights: vec![0.0, 0.0, 1.0],
            negative_strata_weights: vec![0.0, 0.0, 1.0],
        };
        let sampler = McSampler::new(&ds, dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let Some(cmp) = sampler.sample(&mut rng).unwrap() else {
                continue;
            };
            assert!(ds.target().contains(cmp.user, cmp.pos_item));
            assert!(ds.max_level_of(cmp.user, cmp.neg_item).is_none());
        }
    }

    #[test]
    fn empty_strata_skip_the_user() {
        // One user who interacted with every item at the lowest level only:
        // a positive at level 0 admits no stratum (nothing strictly lower,
        // nothing unobserved).
        let pairs: Vec<(u32, u32)> = (0..4u32).map(|i| (0, i)).collect();
        let ds = dataset_from_pairs(&["view", "buy"], 1, 4, &[&pairs, &[(0, 0)]]);
        let dist = McSamplingDist {
            positive_level_weights: vec![1.0, 0.0],
            negative_strata_weights: vec![0.5, 0.5],
        };
        let sampler = McSampler::new(&ds, dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            assert!(sampler.sample(&mut rng).unwrap().is_none());
        }
    }

    #[test]
    fn frozen_gmf_ranks_identically_to_mf_under_the_same_seed() {
        use crate::units::Unit;
        let ds = cascade_ds(5);
        let dist = McSamplingDist::uniform(3);
        let model_config = ModelConfig { embedding_size: 4, seed: 11, ..Default::default() };
        let config = TrainConfig { epochs: 2, ..TrainConfig::defaults_for(3) };

        let (mf, _) = train_mc(&ds, None, &dist, &model_config, &config).unwrap();

        // Build a GMF predictor through the trainable path, pin its
        // projection to all-ones, and freeze it. The embeddings come from
        // the same construction seed, so training must track MF exactly.
        let mut gmf = SingleBehaviorModel::new(ds.num_users(), ds.num_items(), &model_config);
        if let Unit::Gmf(g) = &mut gmf.unit {
            g.h.value.fill(1.0);
        }
        gmf.freeze_output_weight();
        let (gmf_frozen, _) = train_mc_model(gmf, &ds, &dist, &config).unwrap();

        let items: Vec<u32> = (0..ds.num_items() as u32).collect();
        for u in [0u32, 3, 7] {
            let rank = |m: &SingleBehaviorModel| {
                let mut scored: Vec<(u32, f64)> =
                    items.iter().map(|&i| (i, Scorer::score(m, u, i))).collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                scored.into_iter().map(|(i, _)| i).collect::<Vec<_>>()
            };
            assert_eq!(rank(&mf), rank(&gmf_frozen));
        }
    }

    #[test]
    fn mc_training_runs_with_ncf_predictors() {
        let ds = cascade_ds(6);
        let dist = McSamplingDist::uniform(3);
        let model_config = ModelConfig { embedding_size: 4, mlp_layers: 2, seed: 12, ..Default::default() };
        let config = TrainConfig { epochs: 2, ..TrainConfig::defaults_for(3) };
        for kind in [UnitKind::Gmf, UnitKind::Mlp, UnitKind::Neumf] {
            let (model, trace) = train_mc(&ds, Some(kind), &dist, &model_config, &config).unwrap();
            assert_eq!(trace.len(), 2);
            assert!(trace.iter().all(|e| e.loss.is_finite()));
            assert!(model.trains_output_weight());
        }
    }
}
