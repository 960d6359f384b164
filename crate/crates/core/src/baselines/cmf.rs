use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BehaviorDataset;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::kernel::{dot, small_normal, Optimizer, Param, Parameterized};
use crate::train::{EpochStats, LossTrace, PairSampler, TrainConfig, TrainingInstance};

/// Collective matrix factorization with a shared item embedding matrix and
/// one user embedding matrix per behavior level. Level r's reconstruction is
/// p_u^r · q_i, weighted by the per-behavior importance c^r in the squared
/// loss; ranking uses the target level's user matrix.
#[derive(Debug, Clone)]
pub struct CmfModel {
    pub item: Param,
    pub users: Vec<Param>,
    pub weights: Vec<f64>,
}

impl CmfModel {
    pub fn new(
        num_users: usize,
        num_items: usize,
        num_behaviors: usize,
        embedding_size: usize,
        weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if weights.len() != num_behaviors {
            return Err(Error::Config(format!(
                "{} behavior weights for {} behaviors",
                weights.len(),
                num_behaviors
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("behavior weights must be non-negative".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("behavior weights are all zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let item = Param::new("cmf.item", small_normal(&mut rng, num_items, embedding_size, 0.01), 0.0);
        let users = (0..num_behaviors)
            .map(|r| {
                Param::new(
                    format!("cmf.user{}", r + 1),
                    small_normal(&mut rng, num_users, embedding_size, 0.01),
                    0.0,
                )
            })
            .collect();
        Ok(CmfModel {
            item,
            users,
            weights,
        })
    }

    pub fn num_behaviors(&self) -> usize {
        self.users.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.item.value.cols()
    }

    /// Reconstruction of level `r`'s entry for (user, item).
    pub fn score_level(&self, level: usize, user: u32, item: u32) -> f64 {
        dot(
            self.users[level].value.row(user as usize),
            self.item.value.row(item as usize),
        )
    }

    /// Target-behavior score used for ranking.
    pub fn predict(&self, user: u32, item: u32) -> f64 {
        self.score_level(self.users.len() - 1, user, item)
    }

    pub fn set_l2(&mut self, embedding_l2: f64) {
        self.item.l2 = embedding_l2;
        for u in &mut self.users {
            u.l2 = embedding_l2;
        }
    }
}

impl Parameterized for CmfModel {
    fn params(&self) -> Vec<&Param> {
        let mut ps = vec![&self.item];
        ps.extend(self.users.iter());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.item];
        ps.extend(self.users.iter_mut());
        ps
    }
}

impl Scorer for CmfModel {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.predict(user, item)
    }
}

/// Loss over one instance: c^r (y − p_u^r·q_i)².
pub fn cmf_instance_loss(model: &CmfModel, inst: &TrainingInstance) -> f64 {
    let y = if inst.positive { 1.0 } else { 0.0 };
    let e = y - model.score_level(inst.level, inst.user, inst.item);
    model.weights[inst.level] * e * e
}

/// Gradient accumulation for a batch of labeled instances under the weighted
/// squared loss, normalized by `norm`. Returns the unnormalized batch loss.
pub fn cmf_batch_backward(
    model: &mut CmfModel,
    batch: &[TrainingInstance],
    norm: f64,
) -> f64 {
    let mut loss = 0.0;
    let dim = model.embedding_dim();
    let mut dp = vec![0.0; dim];
    let mut dq = vec![0.0; dim];
    for inst in batch {
        let (u, i, r) = (inst.user as usize, inst.item as usize, inst.level);
        let y = if inst.positive { 1.0 } else { 0.0 };
        let c = model.weights[r];
        let pred = dot(model.users[r].value.row(u), model.item.value.row(i));
        let err = pred - y;
        loss += c * err * err;
        let scale = 2.0 * c * err / norm;
        {
            let q = model.item.value.row(i);
            let p = model.users[r].value.row(u);
            for k in 0..dim {
                dp[k] = scale * q[k];
                dq[k] = scale * p[k];
            }
        }
        for (g, d) in model.users[r].grad.row_mut(u).iter_mut().zip(&dp) {
            *g += d;
        }
        for (g, d) in model.item.grad.row_mut(i).iter_mut().zip(&dq) {
            *g += d;
        }
    }
    loss
}

/// Trains CMF over all behavior levels with the same pair/negative sampling
/// scheme as the cascaded model: positives from the observed-pair union,
/// `negative_ratio` sampled zeros per positive, squared loss weighted by the
/// per-behavior importance.
pub fn train_cmf(
    ds: &BehaviorDataset,
    behavior_weights: &[f64],
    embedding_size: usize,
    model_seed: u64,
    config: &TrainConfig,
) -> Result<(CmfModel, LossTrace)> {
    let mut model = CmfModel::new(
        ds.num_users(),
        ds.num_items(),
        ds.num_behaviors(),
        embedding_size,
        behavior_weights.to_vec(),
        model_seed,
    )?;
    model.set_l2(config.l2_embedding);
    let levels: Vec<usize> = (0..ds.num_behaviors()).collect();
    let sampler = PairSampler::new(ds, &levels, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut remaining = sampler.union_size();
        let mut total_loss = 0.0;
        let mut total_instances = 0usize;
        let mut batch = Vec::with_capacity(config.batch_size + 16);
        while remaining > 0 {
            batch.clear();
            while batch.len() < config.batch_size && remaining > 0 {
                sampler.fill_from_pair_draw(config.negative_ratio, &mut rng, &mut batch)?;
                remaining -= 1;
            }
            if batch.is_empty() {
                break;
            }
            let norm = batch.len() as f64;
            let loss = cmf_batch_backward(&mut model, &batch, norm);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            optimizer.step(&mut model.params_mut())?;
            total_loss += loss;
            total_instances += batch.len();
        }
        trace.push(EpochStats {
            epoch,
            loss: total_loss / total_instances.max(1) as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((model, trace))
}
