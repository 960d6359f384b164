use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BehaviorDataset;
use crate::error::{Error, Result};
use crate::kernel::{sigmoid, softplus, Optimizer, Parameterized};
use crate::model::ModelConfig;
use crate::train::{sample_negative, EpochStats, LossTrace, TrainConfig};

use super::SingleBehaviorModel;

/// One pairwise preference: the user should score `pos_item` above
/// `neg_item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Comparison {
    pub user: u32,
    pub pos_item: u32,
    pub neg_item: u32,
}

/// Gradient accumulation for a batch of pairwise comparisons under the BPR
/// loss −ln σ(s_pos − s_neg), normalized by `norm`. Returns the unnormalized
/// batch loss. Operates on the score difference only, so it is invariant to
/// per-user score translations.
pub fn pairwise_backward(
    model: &mut SingleBehaviorModel,
    comparisons: &[Comparison],
    norm: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for cmp in comparisons {
        let (s_pos, cache_pos) = model.score(cmp.user, cmp.pos_item)?;
        let (s_neg, cache_neg) = model.score(cmp.user, cmp.neg_item)?;
        let diff = s_pos - s_neg;
        loss += softplus(-diff);
        let g = -sigmoid(-diff) / norm;
        model.backward_score(cmp.user, cmp.pos_item, &cache_pos, g);
        model.backward_score(cmp.user, cmp.neg_item, &cache_neg, -g);
    }
    Ok(loss)
}

/// Bayesian personalized ranking over a matrix-factorization scorer
/// (p·q + b_i) on the target behavior: per drawn positive pair, one uniform
/// unobserved negative, pairwise log loss, mini-batched SGD.
pub fn train_bpr_mf(
    ds: &BehaviorDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(SingleBehaviorModel, LossTrace)> {
    let target = ds.target_only();
    let set = target.target();
    if set.is_empty() {
        return Err(Error::EmptyInput("target behavior has no interactions".into()));
    }
    let mut model = SingleBehaviorModel::mf(
        target.num_users(),
        target.num_items(),
        model_config.embedding_size,
        model_config.seed,
    );
    model.set_l2(config.l2_embedding, config.l2_interaction);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut remaining = set.len();
        let mut total_loss = 0.0;
        let mut total_pairs = 0usize;
        while remaining > 0 {
            batch.clear();
            while batch.len() < config.batch_size && remaining > 0 {
                let (u, i) = set.pair_at(rng.gen_range(0..set.len()));
                remaining -= 1;
                let j = sample_negative(&target, 0, u, &mut rng)?;
                batch.push(Comparison {
                    user: u,
                    pos_item: i,
                    neg_item: j,
                });
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
    use crate::kernel::{finite_diff_grad, max_relative_error};

    use super::*;

    #[test]
    fn equal_scores_cost_ln_two() {
        // −ln σ(0) = ln 2
        let mut model = SingleBehaviorModel::mf(1, 2, 3, 5);
        // Make both items identical so the difference is exactly zero.
        let q0: Vec<f64> = model.embeddings.item.value.row(0).to_vec();
        model.embeddings.item.value.row_mut(1).copy_from_slice(&q0);
        let cmp = Comparison { user: 0, pos_item: 0, neg_item: 1 };
        let loss = pairwise_backward(&mut model, &[cmp], 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let mut model = SingleBehaviorModel::mf(1, 2, 2, 6);
        model.bias.value.data_mut()[0] = 40.0;
        model.bias.value.data_mut()[1] = -40.0;
        let cmp = Comparison { user: 0, pos_item: 0, neg_item: 1 };
        let loss = pairwise_backward(&mut model, &[cmp], 1.0).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12, "loss = {loss}");
    }

    #[test]
    fn translation_invariance_at_the_score_difference_level() {
        let model = SingleBehaviorModel::mf(2, 5, 4, 7);
        let cmp = Comparison { user: 1, pos_item: 2, neg_item: 4 };
        let s_pos = model.score_value(cmp.user, cmp.pos_item);
        let s_neg = model.score_value(cmp.user, cmp.neg_item);
        for shift in [0.0, 3.5, -12.0] {
            let d = (s_pos + shift) - (s_neg + shift);
            let loss = softplus(-d);
            let base = softplus(-(s_pos - s_neg));
            assert!((loss - base).abs() < 1e-12);
            assert!((sigmoid(-d) - sigmoid(-(s_pos - s_neg))).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_gradients_match_finite_differences() {
        let mut model = SingleBehaviorModel::mf(4, 6, 3, 8);
        let comparisons = vec![
            Comparison { user: 0, pos_item: 1, neg_item: 4 },
            Comparison { user: 2, pos_item: 3, neg_item: 0 },
            Comparison { user: 3, pos_item: 5, neg_item: 2 },
        ];
        pairwise_backward(&mut model, &comparisons, 1.0).unwrap();
        let analytic: Vec<Vec<f64>> =
            model.params().iter().map(|p| p.grad.data().to_vec()).collect();
        for p in model.params_mut() {
            p.zero_grad();
        }
        let numeric = finite_diff_grad(
            &mut model,
            |m| {
                comparisons
                    .iter()
                    .map(|c| {
                        let d = m.score_value(c.user, c.pos_item)
                            - m.score_value(c.user, c.neg_item);
                        softplus(-d)
                    })
                    .sum()
            },
            1e-5,
        );
        for ((a, n), p) in analytic.iter().zip(&numeric).zip(model.params()) {
            let err = max_relative_error(a, n);
            assert!(err < 1e-4, "param {}: err {err}", p.name);
        }
    }

    #[test]
    fn bpr_training_is_deterministic() {
        let target: Vec<(u32, u32)> =
            (0..8u32).flat_map(|u| [(u, u % 5), (u, (u + 2) % 5)]).collect();
        let ds = dataset_from_pairs(&["buy"], 8, 5, &[&target]);
        let model_config = ModelConfig { embedding_size: 4, seed: 3, ..Default::default() };
        let config = TrainConfig { epochs: 3, ..TrainConfig::defaults_for(1) };
        let (a, ta) = train_bpr_mf(&ds, &model_config, &config).unwrap();
        let (b, tb) = train_bpr_mf(&ds, &model_config, &config).unwrap();
        assert_eq!(
            ta.iter().map(|e| e.loss).collect::<Vec<_>>(),
            tb.iter().map(|e| e.loss).collect::<Vec<_>>()
        );
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }
}
