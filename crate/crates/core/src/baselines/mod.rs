//! Comparison models: pointwise single-behavior NCF, BPR-MF, collective
//! matrix factorization with shared item embeddings, and multi-channel BPR
//! wrapping any interaction unit.

mod bpr;
mod cmf;
mod mc;

pub use bpr::{pairwise_backward, train_bpr_mf, Comparison};
pub use cmf::{cmf_batch_backward, cmf_instance_loss, train_cmf, CmfModel};
pub use mc::{train_mc, train_mc_model, McSampler, McSamplingDist};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BehaviorDataset;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::kernel::{sigmoid, DenseMatrix, Optimizer, Param, Parameterized};
use crate::model::{EmbeddingTable, ModelConfig};
use crate::train::{joint_loss, LossTrace, LossWeights, TrainConfig, TrainingInstance};
use crate::units::{GmfUnit, Unit, UnitCache};

use std::time::Instant;

/// A single-behavior scorer: embeddings, one interaction unit, and an item
/// bias. Raw score = f(p_u, q_i) + b_i. Used both pointwise (NCF with a
/// sigmoid log loss) and pairwise (BPR / multi-channel BPR).
#[derive(Debug, Clone)]
pub struct SingleBehaviorModel {
    pub embeddings: EmbeddingTable,
    pub unit: Unit,
    pub bias: Param,
    train_output_weight: bool,
}

impl SingleBehaviorModel {
    /// A trainable NCF unit of the configured kind.
    pub fn new(num_users: usize, num_items: usize, config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = EmbeddingTable::new(num_users, num_items, config.embedding_size, &mut rng);
        let unit = Unit::build(
            config.unit,
            config.embedding_size,
            config.mlp_layers,
            config.mlp_final_width,
            0.0,
            "unit1",
            &mut rng,
        );
        let bias = Param::new("bias1", DenseMatrix::vector(num_items), 0.0);
        SingleBehaviorModel {
            embeddings,
            unit,
            bias,
            train_output_weight: true,
        }
    }

    /// Plain matrix factorization: a GMF unit whose projection is pinned to
    /// all-ones, so the score is p·q + b_i.
    pub fn mf(num_users: usize, num_items: usize, embedding_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = EmbeddingTable::new(num_users, num_items, embedding_size, &mut rng);
        SingleBehaviorModel {
            embeddings,
            unit: Unit::Gmf(GmfUnit::ones(embedding_size, "unit1")),
            bias: Param::new("bias1", DenseMatrix::vector(num_items), 0.0),
            train_output_weight: false,
        }
    }

    /// Freezes the unit's output projection at its current value (used to
    /// pin GMF to the MF special case).
    pub fn freeze_output_weight(&mut self) {
        self.train_output_weight = false;
    }

    pub fn trains_output_weight(&self) -> bool {
        self.train_output_weight
    }

    pub fn num_users(&self) -> usize {
        self.embeddings.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.embeddings.num_items()
    }

    pub fn set_l2(&mut self, embedding_l2: f64, interaction_l2: f64) {
        self.embeddings.user.l2 = embedding_l2;
        self.embeddings.item.l2 = embedding_l2;
        for p in self.unit.params_mut() {
            p.l2 = interaction_l2;
        }
        self.bias.l2 = interaction_l2;
    }

    fn check_indices(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.num_users() || item as usize >= self.num_items() {
            return Err(Error::IndexOutOfRange(format!(
                "({user},{item}) with {} users / {} items",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(())
    }

    /// Raw (pre-sigmoid) score and the cache for its backward pass.
    pub fn score(&self, user: u32, item: u32) -> Result<(f64, UnitCache)> {
        self.check_indices(user, item)?;
        let p = self.embeddings.user.value.row(user as usize);
        let q = self.embeddings.item.value.row(item as usize);
        let (f, cache) = self.unit.forward(p, q);
        Ok((f + self.bias.value.data()[item as usize], cache))
    }

    pub fn score_value(&self, user: u32, item: u32) -> f64 {
        self.score(user, item)
            .expect("scoring indices are validated upstream")
            .0
    }

    /// Sigmoid of the raw score (the pointwise NCF prediction).
    pub fn predict(&self, user: u32, item: u32) -> Result<f64> {
        Ok(sigmoid(self.score(user, item)?.0))
    }

    /// Accumulates gradients of `upstream · score` into the model. The cache
    /// must come from [`SingleBehaviorModel::score`] on the same pair.
    pub fn backward_score(&mut self, user: u32, item: u32, cache: &UnitCache, upstream: f64) {
        let (u, i) = (user as usize, item as usize);
        let dim = self.embeddings.dim();
        let mut dp = vec![0.0; dim];
        let mut dq = vec![0.0; dim];
        let p_row: Vec<f64> = self.embeddings.user.value.row(u).to_vec();
        let q_row: Vec<f64> = self.embeddings.item.value.row(i).to_vec();
        self.unit
            .backward(&p_row, &q_row, cache, upstream, &mut dp, &mut dq);
        if !self.train_output_weight {
            // The frozen projection accumulates no gradient.
            if let Unit::Gmf(g) = &mut self.unit {
                g.h.zero_grad();
            }
        }
        self.bias.grad.data_mut()[i] += upstream;
        for (g, d) in self.embeddings.user.grad.row_mut(u).iter_mut().zip(&dp) {
            *g += d;
        }
        for (g, d) in self.embeddings.item.grad.row_mut(i).iter_mut().zip(&dq) {
            *g += d;
        }
    }

    /// Every parameter including frozen ones, for checkpointing.
    pub fn all_params(&self) -> Vec<&Param> {
        let mut ps = vec![&self.embeddings.user, &self.embeddings.item];
        ps.extend(self.unit.params());
        ps.push(&self.bias);
        ps
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.embeddings.user, &mut self.embeddings.item];
        ps.extend(self.unit.params_mut());
        ps.push(&mut self.bias);
        ps
    }
}

impl Parameterized for SingleBehaviorModel {
    /// Trainable parameters only; a frozen output projection is excluded.
    fn params(&self) -> Vec<&Param> {
        let mut ps = vec![&self.embeddings.user, &self.embeddings.item];
        if self.train_output_weight {
            ps.extend(self.unit.params());
        }
        ps.push(&self.bias);
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.embeddings.user, &mut self.embeddings.item];
        if self.train_output_weight {
            ps.extend(self.unit.params_mut());
        }
        ps.push(&mut self.bias);
        ps
    }
}

impl Scorer for SingleBehaviorModel {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.score_value(user, item)
    }
}

/// Pointwise gradient accumulation for a batch of labeled instances under
/// the sigmoid log loss: ∂loss/∂score = (σ(score) − label) / norm. Returns
/// the unnormalized batch loss.
pub fn pointwise_backward(
    model: &mut SingleBehaviorModel,
    batch: &[TrainingInstance],
    norm: f64,
) -> Result<f64> {
    let weights = LossWeights::new(vec![1.0]).expect("unit weight");
    let mut probs = Vec::with_capacity(batch.len());
    for inst in batch {
        let (score, cache) = model.score(inst.user, inst.item)?;
        let y = sigmoid(score);
        probs.push(y);
        let label = if inst.positive { 1.0 } else { 0.0 };
        model.backward_score(inst.user, inst.item, &cache, (y - label) / norm);
    }
    joint_loss(&probs, batch, &weights)
}

/// Trains a pointwise NCF model (GMF / MLP / NeuMF) on the target behavior
/// only, with the same sampling and loss conventions as the cascaded model
/// restricted to one level.
pub fn train_single_ncf(
    ds: &BehaviorDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(SingleBehaviorModel, LossTrace)> {
    let target = ds.target_only();
    if target.target().is_empty() {
        return Err(Error::EmptyInput("target behavior has no interactions".into()));
    }
    let mut model = SingleBehaviorModel::new(target.num_users(), target.num_items(), model_config);
    model.set_l2(config.l2_embedding, config.l2_interaction);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.epochs);
    let pairs_per_epoch = target.target().len();
    let set = target.target();
    let mut batch = Vec::with_capacity(config.batch_size + 8);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut remaining = pairs_per_epoch;
        let mut total_loss = 0.0;
        let mut total_instances = 0usize;
        while remaining > 0 {
            batch.clear();
            while batch.len() < config.batch_size && remaining > 0 {
                use rand::Rng;
                let (u, i) = set.pair_at(rng.gen_range(0..set.len()));
                remaining -= 1;
                batch.push(TrainingInstance { user: u, item: i, level: 0, positive: true });
                for _ in 0..config.negative_ratio {
                    let j = crate::train::sample_negative(&target, 0, u, &mut rng)?;
                    batch.push(TrainingInstance { user: u, item: j, level: 0, positive: false });
                }
            }
            let norm = batch.len() as f64;
            let loss = pointwise_backward(&mut model, &batch, norm)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            optimizer.step(&mut model.params_mut())?;
            total_loss += loss;
            total_instances += batch.len();
        }
        trace.push(crate::train::EpochStats {
            epoch,
            loss: total_loss / total_instances.max(1) as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((model, trace))
}
