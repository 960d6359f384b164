//! Joint multi-task training: per-behavior negative sampling, mini-batch
//! assembly over the observed-pair union, the weighted log loss, and the
//! multi-task / sequential training loops.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BehaviorDataset;
use crate::error::{Error, Result};
use crate::kernel::{Optimizer, OptimizerKind, Parameterized};
use crate::model::NmtrModel;

const LOG_CLAMP: f64 = 1e-12;
const NEGATIVE_RETRIES: u32 = 100;

/// Per-behavior loss coefficients, constrained to sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("loss weights are empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "loss weights must sum to 1, got {sum}"
            )));
        }
        Ok(LossWeights(weights))
    }

    pub fn uniform(num_behaviors: usize) -> Self {
        LossWeights(vec![1.0 / num_behaviors as f64; num_behaviors])
    }

    pub fn one_hot(num_behaviors: usize, level: usize) -> Self {
        let mut w = vec![0.0; num_behaviors];
        w[level] = 1.0;
        LossWeights(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, level: usize) -> f64 {
        self.0[level]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for LossWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LossWeights::new(v)
    }
}

impl From<LossWeights> for Vec<f64> {
    fn from(w: LossWeights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    MultiTask,
    Sequential,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_weights: LossWeights,
    pub negative_ratio: u32,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// L2 coefficient for the embedding table.
    pub l2_embedding: f64,
    /// L2 coefficient for interaction-function parameters and item biases.
    pub l2_interaction: f64,
    pub rng_seed: u64,
    pub mode: TrainMode,
    /// Optional per-level weights for the observed-pair draw. `None` keeps
    /// the default: uniform over the multiset union, where a pair observed
    /// at k levels is k times as likely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_level_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    /// Defaults mirroring the reference setting: Adagrad at 0.01, negative
    /// ratio 4, L2 (0, 1e-5), loss weights (0.4, 0.6) for two levels and
    /// uniform otherwise.
    pub fn defaults_for(num_behaviors: usize) -> Self {
        let loss_weights = if num_behaviors == 2 {
            LossWeights::new(vec![0.4, 0.6]).expect("valid default weights")
        } else {
            LossWeights::uniform(num_behaviors)
        };
        TrainConfig {
            loss_weights,
            negative_ratio: 4,
            batch_size: 256,
            epochs: 50,
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.01,
            l2_embedding: 0.0,
            l2_interaction: 1e-5,
            rng_seed: 42,
            mode: TrainMode::MultiTask,
            pair_level_weights: None,
        }
    }

    pub fn validate(&self, num_behaviors: usize) -> Result<()> {
        if self.loss_weights.len() != num_behaviors {
            return Err(Error::Config(format!(
                "{} loss weights for {} behaviors",
                self.loss_weights.len(),
                num_behaviors
            )));
        }
        if self.negative_ratio < 1 {
            return Err(Error::Config("negative_ratio must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(w) = &self.pair_level_weights {
            if w.len() != num_behaviors {
                return Err(Error::Config(format!(
                    "{} pair level weights for {} behaviors",
                    w.len(),
                    num_behaviors
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(
                    "pair level weights must be non-negative with positive sum".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One pointwise training example: a (user, item) pair at one behavior
/// level, labeled positive (observed) or negative (sampled unobserved).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingInstance {
    pub user: u32,
    pub item: u32,
    pub level: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

pub type LossTrace = Vec<EpochStats>;

/// Draws observed (user, item) pairs from a subset of behavior levels.
pub(crate) struct PairSampler<'a> {
    ds: &'a BehaviorDataset,
    levels: Vec<usize>,
    /// Cumulative pair counts per selected level (multiset sampling).
    cumulative: Vec<usize>,
    total: usize,
    /// Level-weight thresholds when a weighted draw is configured.
    weighted: Option<Vec<f64>>,
    union_size: usize,
}

impl<'a> PairSampler<'a> {
    pub(crate) fn new(
        ds: &'a BehaviorDataset,
        levels: &[usize],
        level_weights: Option<&[f64]>,
    ) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(levels.len());
        let mut total = 0usize;
        for &r in levels {
            total += ds.behavior(r).len();
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::EmptyInput(
                "no observed interactions at the selected behavior levels".into(),
            ));
        }
        let weighted = level_weights.map(|w| {
            let mut acc = 0.0;
            levels
                .iter()
                .map(|&r| {
                    acc += w[r] * ds.behavior(r).len() as f64;
                    acc
                })
                .collect()
        });
        Ok(PairSampler {
            ds,
            levels: levels.to_vec(),
            cumulative,
            total,
            weighted,
            union_size: ds.distinct_pairs(levels),
        })
    }

    /// Number of distinct observed pairs across the selected levels; one
    /// epoch draws this many pairs.
    pub(crate) fn union_size(&self) -> usize {
        self.union_size
    }

    fn draw_pair(&self, rng: &mut ChaCha8Rng) -> (u32, u32) {
        if let Some(thresholds) = &self.weighted {
            let top = *thresholds.last().expect("non-empty levels");
            let x = rng.gen::<f64>() * top;
            let pos = thresholds.partition_point(|&t| t <= x).min(self.levels.len() - 1);
            let level = self.levels[pos];
            let set = self.ds.behavior(level);
            return set.pair_at(rng.gen_range(0..set.len()));
        }
        let k = rng.gen_range(0..self.total);
        let pos = self.cumulative.partition_point(|&c| c <= k);
        let level = self.levels[pos];
        let offset = if pos == 0 { k } else { k - self.cumulative[pos - 1] };
        self.ds.behavior(level).pair_at(offset)
    }

    /// Draws one pair and emits its instances; shared with training loops
    /// outside this module that follow the same sampling scheme.
    pub(crate) fn fill_from_pair_draw(
        &self,
        negative_ratio: u32,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<TrainingInstance>,
    ) -> Result<()> {
        let (u, i) = self.draw_pair(rng);
        self.emit_instances(u, i, negative_ratio, rng, out)
    }

    /// Emits, for each selected level where the pair is observed, one
    /// positive instance and `negative_ratio` sampled negatives.
    fn emit_instances(
        &self,
        user: u32,
        item: u32,
        negative_ratio: u32,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<TrainingInstance>,
    ) -> Result<()> {
        for &level in &self.levels {
            if !self.ds.behavior(level).contains(user, item) {
                continue;
            }
            out.push(TrainingInstance {
                user,
                item,
                level,
                positive: true,
            });
            for _ in 0..negative_ratio {
                let j = sample_negative(self.ds, level, user, rng)?;
                out.push(TrainingInstance {
                    user,
                    item: j,
                    level,
                    positive: false,
                });
            }
        }
        Ok(())
    }
}

/// Uniform draw over items the user has not interacted with at `level`,
/// via bounded rejection sampling.
pub(crate) fn sample_negative(
    ds: &BehaviorDataset,
    level: usize,
    user: u32,
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    let n = ds.num_items() as u32;
    let set = ds.behavior(level);
    for _ in 0..NEGATIVE_RETRIES {
        let j = rng.gen_range(0..n);
        if !set.contains(user, j) {
            return Ok(j);
        }
    }
    Err(Error::NegativeSamplingExhausted {
        user,
        level,
    })
}

/// Assembles one mini-batch: repeatedly draws an observed pair from the
/// multiset union of all behavior sets, emits its positive instances plus
/// `negative_ratio` negatives per level, and stops once at least
/// `batch_size` instances have accumulated.
pub fn sample_minibatch(
    ds: &BehaviorDataset,
    batch_size: usize,
    negative_ratio: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingInstance>> {
    let levels: Vec<usize> = (0..ds.num_behaviors()).collect();
    let sampler = PairSampler::new(ds, &levels, None)?;
    let mut out = Vec::with_capacity(batch_size + negative_ratio as usize);
    while out.len() < batch_size {
        let (u, i) = sampler.draw_pair(rng);
        sampler.emit_instances(u, i, negative_ratio, rng, &mut out)?;
    }
    Ok(out)
}

/// The joint weighted log loss over a group of instances:
/// −Σ_r λ_r [ Σ_pos log ŷ^r + Σ_neg log(1−ŷ^r) ], with log arguments
/// clamped at 1e-12. `probs[k]` must be the level-`instances[k].level`
/// probability for that instance's pair.
pub fn joint_loss(
    probs: &[f64],
    instances: &[TrainingInstance],
    weights: &LossWeights,
) -> Result<f64> {
    assert_eq!(probs.len(), instances.len(), "one probability per instance");
    let mut loss = 0.0;
    for (inst, &y) in instances.iter().zip(probs) {
        if inst.level >= weights.len() {
            return Err(Error::Config(format!(
                "instance at level {} but only {} loss weights",
                inst.level,
                weights.len()
            )));
        }
        let term = if inst.positive {
            y.max(LOG_CLAMP).ln()
        } else {
            (1.0 - y).max(LOG_CLAMP).ln()
        };
        loss -= weights.get(inst.level) * term;
    }
    Ok(loss)
}

/// ∂(joint loss)/∂ŷ for one instance, scaled by 1/norm:
/// −λ_r (label/ŷ − (1−label)/(1−ŷ)) / norm, with the denominators clamped
/// consistently with [`joint_loss`].
pub fn loss_upstream(prob: f64, positive: bool, lambda: f64, norm: f64) -> f64 {
    if positive {
        -lambda / prob.max(LOG_CLAMP) / norm
    } else {
        lambda / (1.0 - prob).max(LOG_CLAMP) / norm
    }
}

/// Forward + backward over one batch: accumulates parameter gradients for
/// the joint loss normalized by `norm`, and returns the unnormalized batch
/// loss. Does not touch the optimizer.
pub fn batch_backward(
    model: &mut NmtrModel,
    batch: &[TrainingInstance],
    weights: &LossWeights,
    norm: f64,
) -> Result<f64> {
    let levels = model.num_behaviors();
    let mut forwards = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    for inst in batch {
        let fwd = model.predict_all(inst.user, inst.item)?;
        probs.push(fwd.probs[inst.level]);
        forwards.push(fwd);
    }
    let loss = joint_loss(&probs, batch, weights)?;
    let mut upstream = vec![0.0; levels];
    for (inst, fwd) in batch.iter().zip(&forwards) {
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[inst.level] = loss_upstream(
            fwd.probs[inst.level],
            inst.positive,
            weights.get(inst.level),
            norm,
        );
        model.backward(fwd, &upstream);
    }
    Ok(loss)
}

fn run_epoch(
    model: &mut NmtrModel,
    sampler: &PairSampler,
    config: &TrainConfig,
    weights: &LossWeights,
    optimizer: &mut Optimizer,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats> {
    let start = Instant::now();
    let mut remaining = sampler.union_size();
    let mut total_loss = 0.0;
    let mut total_instances = 0usize;
    let mut batch = Vec::with_capacity(config.batch_size + 16);
    while remaining > 0 {
        batch.clear();
        while batch.len() < config.batch_size && remaining > 0 {
            let (u, i) = sampler.draw_pair(rng);
            remaining -= 1;
            sampler.emit_instances(u, i, config.negative_ratio, rng, &mut batch)?;
        }
        if batch.is_empty() {
            break;
        }
        let norm = batch.len() as f64;
        let loss = batch_backward(model, &batch, weights, norm)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        optimizer.step(&mut model.params_mut())?;
        total_loss += loss;
        total_instances += batch.len();
    }
    let loss = if total_instances == 0 {
        0.0
    } else {
        total_loss / total_instances as f64
    };
    Ok(EpochStats {
        epoch,
        loss,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Trains all behavior levels jointly under the configured loss weights.
/// Each epoch draws as many pairs as there are distinct observed pairs.
/// Returns the per-epoch mean instance loss. Deterministic given the seed.
pub fn train_multitask(
    model: &mut NmtrModel,
    ds: &BehaviorDataset,
    config: &TrainConfig,
) -> Result<LossTrace> {
    train_multitask_observed(model, ds, config, |_, _| {})
}

/// [`train_multitask`] with a per-epoch observer (used for validation
/// tracking); the observer sees the freshly updated model.
pub fn train_multitask_observed(
    model: &mut NmtrModel,
    ds: &BehaviorDataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &NmtrModel),
) -> Result<LossTrace> {
    validate_setup(model, ds, config)?;
    model.set_l2(config.l2_embedding, config.l2_interaction);
    let levels: Vec<usize> = (0..ds.num_behaviors()).collect();
    let sampler = PairSampler::new(ds, &levels, config.pair_level_weights.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = run_epoch(
            model,
            &sampler,
            config,
            &config.loss_weights,
            &mut optimizer,
            &mut rng,
            epoch,
        )?;
        observer(&stats, model);
        trace.push(stats);
    }
    Ok(trace)
}

/// Trains one behavior level at a time in cascade order, each phase running
/// the full epoch budget with a one-hot loss weight on its level and drawing
/// pairs from that level only. Nothing is frozen between phases, so lower
/// levels keep receiving gradient through the cascade. A fresh optimizer
/// starts each phase.
pub fn train_sequential(
    model: &mut NmtrModel,
    ds: &BehaviorDataset,
    config: &TrainConfig,
) -> Result<LossTrace> {
    train_sequential_observed(model, ds, config, |_, _| {})
}

pub fn train_sequential_observed(
    model: &mut NmtrModel,
    ds: &BehaviorDataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &NmtrModel),
) -> Result<LossTrace> {
    validate_setup(model, ds, config)?;
    model.set_l2(config.l2_embedding, config.l2_interaction);
    let num_levels = ds.num_behaviors();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut trace = Vec::with_capacity(config.epochs * num_levels);
    let mut global_epoch = 0usize;
    for level in 0..num_levels {
        if ds.behavior(level).is_empty() {
            log::warn!("behavior level {level} has no interactions; phase skipped");
            continue;
        }
        let weights = LossWeights::one_hot(num_levels, level);
        let sampler = PairSampler::new(ds, &[level], None)?;
        let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
        for _ in 0..config.epochs {
            let stats = run_epoch(
                model,
                &sampler,
                config,
                &weights,
                &mut optimizer,
                &mut rng,
                global_epoch,
            )?;
            observer(&stats, model);
            trace.push(stats);
            global_epoch += 1;
        }
    }
    Ok(trace)
}

fn validate_setup(model: &NmtrModel, ds: &BehaviorDataset, config: &TrainConfig) -> Result<()> {
    if model.num_behaviors() != ds.num_behaviors() {
        return Err(Error::Config(format!(
            "model has {} behavior levels, dataset has {}",
            model.num_behaviors(),
            ds.num_behaviors()
        )));
    }
    config.validate(ds.num_behaviors())
}
