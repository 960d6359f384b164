use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::sigmoid;

use super::{BehaviorDataset, BehaviorSchema, InteractionSet, KeyIndex};

/// Configuration for the synthetic cascade generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_behaviors: usize,
    pub latent_dim: usize,
    /// Per-level pass probabilities in [0,1]; level r fires only if level
    /// r−1 fired, with probability funnel_probs[r] × logistic score.
    pub funnel_probs: Vec<f64>,
    /// Sharpness of the logistic acceptance score.
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// When set, a level fires iff its probability exceeds 1/2 instead of a
    /// Bernoulli draw. With all funnel probabilities at 1 this makes every
    /// behavior set identical.
    #[serde(default)]
    pub deterministic_acceptance: bool,
    pub rng_seed: u64,
}

fn default_gain() -> f64 {
    4.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 200,
            num_items: 100,
            num_behaviors: 2,
            latent_dim: 8,
            funnel_probs: vec![0.2, 0.4],
            gain: default_gain(),
            deterministic_acceptance: false,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_behaviors == 0 {
            return Err(Error::Config("users, items, and behaviors must all be ≥ 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be ≥ 1".into()));
        }
        if self.funnel_probs.len() != self.num_behaviors {
            return Err(Error::Config(format!(
                "funnel_probs has {} entries for {} behaviors",
                self.funnel_probs.len(),
                self.num_behaviors
            )));
        }
        if self.funnel_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("funnel_probs entries must lie in [0,1]".into()));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::Config("gain must be positive".into()));
        }
        Ok(())
    }
}

/// Generates a multi-behavior dataset with planted low-rank structure and
/// strict cascade containment: every pair at level r also appears at every
/// lower level. Behaviors are named `level1..levelR`, lowest first.
///
/// Each (user, item) pair gets an acceptance score σ(gain · x_u·z_i) from
/// unit-norm planted factors; level 1 fires with probability
/// funnel_probs[0] × score and each later level fires, given its
/// predecessor, with its own funnel probability times the same score.
/// Deterministic given the seed.
pub fn synthesize_cascade(config: &SynthConfig) -> Result<BehaviorDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let user_latents = planted_factors(&mut rng, config.num_users, config.latent_dim);
    let item_latents = planted_factors(&mut rng, config.num_items, config.latent_dim);

    let r_levels = config.num_behaviors;
    let mut raw: Vec<Vec<(u32, u32)>> = vec![Vec::new(); r_levels];
    for u in 0..config.num_users {
        let xu = &user_latents[u];
        for i in 0..config.num_items {
            let zi = &item_latents[i];
            let score = sigmoid(config.gain * dot(xu, zi));
            for (r, raw_level) in raw.iter_mut().enumerate() {
                let p = config.funnel_probs[r] * score;
                let fired = if config.deterministic_acceptance {
                    p >= 0.5
                } else {
                    rng.gen::<f64>() < p
                };
                if !fired {
                    break;
                }
                raw_level.push((u as u32, i as u32));
            }
        }
    }

    if raw[r_levels - 1].is_empty() {
        return Err(Error::EmptySynthTarget);
    }

    let schema = BehaviorSchema::new((1..=r_levels).map(|r| format!("level{r}")).collect())?;
    let mut users = KeyIndex::new();
    for u in 0..config.num_users {
        users.insert_or_get(&format!("u{u}"));
    }
    let mut items = KeyIndex::new();
    for i in 0..config.num_items {
        items.insert_or_get(&format!("i{i}"));
    }
    let behaviors = raw
        .into_iter()
        .map(|pairs| InteractionSet::from_pairs(pairs, config.num_users))
        .collect();
    BehaviorDataset::new(schema, users, items, behaviors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn planted_factors(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect()
}
