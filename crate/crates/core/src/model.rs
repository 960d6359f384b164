//! The cascaded multi-behavior predictor: one shared user/item embedding
//! table, one interaction unit per behavior level, a per-level item bias
//! vector, and a sigmoid chain feeding each level's probability into the
//! next level's pre-activation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BehaviorSchema;
use crate::error::{Error, Result};
use crate::kernel::{sigmoid, small_normal, DenseMatrix, Param, Parameterized};
use crate::units::{Unit, UnitCache, UnitKind};

/// Shared M×E user and N×E item embeddings; every behavior level reads the
/// same rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub user: Param,
    pub item: Param,
}

impl EmbeddingTable {
    pub fn new(num_users: usize, num_items: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        EmbeddingTable {
            user: Param::new("embedding.user", small_normal(rng, num_users, dim, 0.01), 0.0),
            item: Param::new("embedding.item", small_normal(rng, num_items, dim, 0.01), 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.user.value.cols()
    }

    pub fn num_users(&self) -> usize {
        self.user.value.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item.value.rows()
    }
}

/// Model shape settings shared by every model family in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub unit: UnitKind,
    pub embedding_size: usize,
    pub mlp_layers: usize,
    /// Final tower width; defaults to the embedding size so NeuMF's output
    /// projection has length 2E.
    pub mlp_final_width: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            unit: UnitKind::Gmf,
            embedding_size: 64,
            mlp_layers: 3,
            mlp_final_width: None,
            seed: 42,
        }
    }
}

/// Everything a backward pass needs from one (user, item) forward: the
/// per-level probabilities and the per-level unit caches.
#[derive(Debug, Clone)]
pub struct CascadeForward {
    pub user: u32,
    pub item: u32,
    pub probs: Vec<f64>,
    caches: Vec<UnitCache>,
}

/// The full cascaded model.
#[derive(Debug, Clone)]
pub struct NmtrModel {
    schema: BehaviorSchema,
    pub embeddings: EmbeddingTable,
    pub units: Vec<Unit>,
    pub biases: Vec<Param>,
}

impl NmtrModel {
    /// Builds a model with one unit of `config.unit` per behavior level.
    pub fn new(
        schema: BehaviorSchema,
        num_users: usize,
        num_items: usize,
        config: &ModelConfig,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = EmbeddingTable::new(num_users, num_items, config.embedding_size, &mut rng);
        let units = (0..schema.num_behaviors())
            .map(|r| {
                Unit::build(
                    config.unit,
                    config.embedding_size,
                    config.mlp_layers,
                    config.mlp_final_width,
                    0.0,
                    &format!("unit{}", r + 1),
                    &mut rng,
                )
            })
            .collect();
        Self::assemble(schema, embeddings, units, num_items)
    }

    /// Builds from explicit parts; unit kinds may differ per level.
    pub fn with_units(
        schema: BehaviorSchema,
        embeddings: EmbeddingTable,
        units: Vec<Unit>,
    ) -> Result<Self> {
        let num_items = embeddings.num_items();
        Self::assemble(schema, embeddings, units, num_items)
    }

    fn assemble(
        schema: BehaviorSchema,
        embeddings: EmbeddingTable,
        units: Vec<Unit>,
        num_items: usize,
    ) -> Result<Self> {
        if units.len() != schema.num_behaviors() {
            return Err(Error::Config(format!(
                "{} units for {} behaviors",
                units.len(),
                schema.num_behaviors()
            )));
        }
        let dim = embeddings.dim();
        for unit in &units {
            if unit.embedding_dim() != dim {
                return Err(Error::Config(format!(
                    "unit expects embedding dim {}, table has {}",
                    unit.embedding_dim(),
                    dim
                )));
            }
        }
        let biases = (0..schema.num_behaviors())
            .map(|r| {
                Param::new(
                    format!("bias{}", r + 1),
                    DenseMatrix::vector(num_items),
                    0.0,
                )
            })
            .collect();
        Ok(NmtrModel {
            schema,
            embeddings,
            units,
            biases,
        })
    }

    pub fn schema(&self) -> &BehaviorSchema {
        &self.schema
    }

    pub fn num_behaviors(&self) -> usize {
        self.units.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Sets the L2 coefficients: one for the embedding table, one for
    /// everything else (unit parameters and item biases).
    pub fn set_l2(&mut self, embedding_l2: f64, interaction_l2: f64) {
        self.embeddings.user.l2 = embedding_l2;
        self.embeddings.item.l2 = embedding_l2;
        for unit in &mut self.units {
            for p in unit.params_mut() {
                p.l2 = interaction_l2;
            }
        }
        for b in &mut self.biases {
            b.l2 = interaction_l2;
        }
    }

    fn check_indices(&self, user: u32, item: u32) -> Result<()> {
        if (user as usize) >= self.embeddings.num_users() {
            return Err(Error::IndexOutOfRange(format!(
                "user {user} with {} users",
                self.embeddings.num_users()
            )));
        }
        if (item as usize) >= self.embeddings.num_items() {
            return Err(Error::IndexOutOfRange(format!(
                "item {item} with {} items",
                self.embeddings.num_items()
            )));
        }
        Ok(())
    }

    /// Runs the cascade for one (user, item) pair, producing all R level
    /// probabilities: level 1 is σ(f¹ + b¹), each later level r is
    /// σ(ŷ^{r−1} + f^r + b^r). Probabilities are strictly inside (0,1).
    pub fn predict_all(&self, user: u32, item: u32) -> Result<CascadeForward> {
        self.check_indices(user, item)?;
        let p = self.embeddings.user.value.row(user as usize);
        let q = self.embeddings.item.value.row(item as usize);
        let mut probs = Vec::with_capacity(self.units.len());
        let mut caches = Vec::with_capacity(self.units.len());
        let mut prev = 0.0;
        for (unit, bias) in self.units.iter().zip(&self.biases) {
            let (score, cache) = unit.forward(p, q);
            let y = sigmoid(prev + score + bias.value.data()[item as usize]);
            probs.push(y);
            caches.push(cache);
            prev = y;
        }
        Ok(CascadeForward {
            user,
            item,
            probs,
            caches,
        })
    }

    /// Target-behavior probability only.
    pub fn predict_target(&self, user: u32, item: u32) -> Result<f64> {
        Ok(*self
            .predict_all(user, item)?
            .probs
            .last()
            .expect("at least one behavior"))
    }

    /// Reverse-mode pass through the cascade. `upstream[r]` is ∂loss/∂ŷ^r;
    /// the chain σ'(s_{r+1})·∂s_{r+1}/∂ŷ^r = σ'(s_{r+1}) carries every
    /// higher level's signal down through the cascade, and the shared
    /// embedding rows accumulate contributions from all levels.
    pub fn backward(&mut self, forward: &CascadeForward, upstream: &[f64]) {
        assert_eq!(
            upstream.len(),
            self.units.len(),
            "upstream vector must have one entry per behavior level"
        );
        let (u, i) = (forward.user as usize, forward.item as usize);
        let dim = self.embeddings.dim();
        let mut dp = vec![0.0; dim];
        let mut dq = vec![0.0; dim];
        let p_row: Vec<f64> = self.embeddings.user.value.row(u).to_vec();
        let q_row: Vec<f64> = self.embeddings.item.value.row(i).to_vec();

        let mut carry = 0.0;
        for r in (0..self.units.len()).rev() {
            let y = forward.probs[r];
            let total = upstream[r] + carry;
            let ds = total * y * (1.0 - y);
            self.biases[r].grad.data_mut()[i] += ds;
            self.units[r].backward(&p_row, &q_row, &forward.caches[r], ds, &mut dp, &mut dq);
            carry = ds;
        }

        for (g, d) in self.embeddings.user.grad.row_mut(u).iter_mut().zip(&dp) {
            *g += d;
        }
        for (g, d) in self.embeddings.item.grad.row_mut(i).iter_mut().zip(&dq) {
            *g += d;
        }
    }

    /// Ranks the given items by target-behavior probability, descending;
    /// ties break toward the smaller item index.
    pub fn score_target(&self, user: u32, items: &[u32]) -> Result<Vec<(u32, f64)>> {
        let mut scored = Vec::with_capacity(items.len());
        for &item in items {
            scored.push((item, self.predict_target(user, item)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }
}

impl Parameterized for NmtrModel {
    fn params(&self) -> Vec<&Param> {
        let mut ps = vec![&self.embeddings.user, &self.embeddings.item];
        for unit in &self.units {
            ps.extend(unit.params());
        }
        ps.extend(self.biases.iter());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.embeddings.user, &mut self.embeddings.item];
        for unit in &mut self.units {
            ps.extend(unit.params_mut());
        }
        ps.extend(self.biases.iter_mut());
        ps
    }
}

#[cfg(test)]
mod tests {
    use crate::kernel::{finite_diff_grad, max_relative_error};

    use super::*;

    fn schema(r: usize) -> BehaviorSchema {
        BehaviorSchema::new((1..=r).map(|k| format!("level{k}")).collect()).unwrap()
    }

    fn small_model(r: usize, kind: UnitKind, seed: u64) -> NmtrModel {
        let config = ModelConfig {
            unit: kind,
            embedding_size: 4,
            mlp_layers: 2,
            mlp_final_width: None,
            seed,
        };
        NmtrModel::new(schema(r), 5, 6, &config).unwrap()
    }

    fn zeroed(mut model: NmtrModel) -> NmtrModel {
        for p in model.params_mut() {
            p.value.fill(0.0);
        }
        model
    }

    #[test]
    fn zero_parameter_cascade_matches_sigma_chain() {
        let model = zeroed(small_model(2, UnitKind::Gmf, 1));
        let fwd = model.predict_all(0, 0).unwrap();
        assert!((fwd.probs[0] - 0.5).abs() < 1e-15);
        assert!((fwd.probs[1] - 0.622_459_331_201_854_6).abs() < 1e-12);
    }

    #[test]
    fn single_level_reduces_to_plain_ncf() {
        let model = small_model(1, UnitKind::Gmf, 2);
        let fwd = model.predict_all(1, 2).unwrap();
        let p = model.embeddings.user.value.row(1);
        let q = model.embeddings.item.value.row(2);
        let (score, _) = model.units[0].forward(p, q);
        let expected = sigmoid(score + model.biases[0].value.data()[2]);
        assert!((fwd.probs[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn outputs_stay_in_open_interval() {
        let mut model = small_model(3, UnitKind::Gmf, 3);
        for p in model.params_mut() {
            p.value.fill(500.0);
        }
        let fwd = model.predict_all(0, 0).unwrap();
        for y in fwd.probs {
            assert!(y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn huge_target_bias_saturates_only_the_target_level() {
        let mut model = small_model(2, UnitKind::Gmf, 4);
        let before = model.predict_all(0, 0).unwrap();
        model.biases[1].grad.fill(0.0);
        model.biases[1].value.data_mut()[0] = 1e6;
        let after = model.predict_all(0, 0).unwrap();
        assert_eq!(before.probs[0], after.probs[0], "cascade is feed-forward only");
        assert!(after.probs[1] > 1.0 - 1e-9);
    }

    #[test]
    fn cascade_causality_under_parameter_perturbation() {
        let mut model = small_model(3, UnitKind::Gmf, 5);
        let before = model.predict_all(2, 3).unwrap();
        // Perturb level 2's unit: levels at or above change, level 1 does not.
        for p in model.units[1].params_mut() {
            p.value.data_mut()[0] += 0.37;
        }
        let after = model.predict_all(2, 3).unwrap();
        assert_eq!(before.probs[0], after.probs[0]);
        assert_ne!(before.probs[1], after.probs[1]);
        assert_ne!(before.probs[2], after.probs[2]);
    }

    #[test]
    fn shared_embeddings_touch_every_level() {
        let mut model = small_model(3, UnitKind::Gmf, 6);
        let before = model.predict_all(1, 1).unwrap();
        model.embeddings.user.value.row_mut(1)[0] += 0.5;
        let after = model.predict_all(1, 1).unwrap();
        for r in 0..3 {
            assert_ne!(before.probs[r], after.probs[r], "level {r} ignored the embedding");
        }
    }

    #[test]
    fn out_of_range_indices_error() {
        let model = small_model(2, UnitKind::Gmf, 7);
        assert!(model.predict_all(99, 0).is_err());
        assert!(model.predict_all(0, 99).is_err());
    }

    #[test]
    fn score_target_breaks_ties_by_ascending_index() {
        let model = zeroed(small_model(2, UnitKind::Gmf, 8));
        let ranked = model.score_target(0, &[4, 1, 3]).unwrap();
        let order: Vec<u32> = ranked.iter().map(|&(i, _)| i).collect();
        assert_eq!(order, vec![1, 3, 4]);
        let single = model.score_target(0, &[2]).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn score_target_matches_brute_force_resort() {
        let model = small_model(2, UnitKind::Neumf, 9);
        let items: Vec<u32> = (0..6).collect();
        let ranked = model.score_target(3, &items).unwrap();
        let mut brute: Vec<(u32, f64)> = items
            .iter()
            .map(|&i| (i, model.predict_target(3, i).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(ranked, brute);
    }

    #[test]
    fn upstream_only_at_level_one_leaves_higher_units_untouched() {
        let mut model = small_model(2, UnitKind::Gmf, 10);
        let fwd = model.predict_all(0, 0).unwrap();
        model.backward(&fwd, &[1.0, 0.0]);
        for p in model.units[1].params() {
            assert!(p.grad.data().iter().all(|&g| g == 0.0));
        }
        assert!(model.biases[1].grad.data().iter().all(|&g| g == 0.0));
        // While level-2-only upstream reaches level 1 through the chain.
        let mut model = small_model(2, UnitKind::Gmf, 10);
        let fwd = model.predict_all(0, 0).unwrap();
        model.backward(&fwd, &[0.0, 1.0]);
        let touched = model.units[0]
            .params()
            .iter()
            .any(|p| p.grad.data().iter().any(|&g| g != 0.0));
        assert!(touched, "cascade coupling must reach level 1");
    }

    #[test]
    fn backward_matches_finite_differences_on_a_joint_loss() {
        for (kind, seed) in [
            (UnitKind::Gmf, 11u64),
            (UnitKind::Mlp, 12),
            (UnitKind::Neumf, 13),
        ] {
            let mut model = small_model(3, kind, seed);
            // An arbitrary smooth loss over all levels of two pairs.
            let weights = [0.9, -0.4, 1.3];
            let pairs = [(0u32, 1u32), (3, 4)];
            let loss = |m: &NmtrModel| -> f64 {
                pairs
                    .iter()
                    .map(|&(u, i)| {
                        let fwd = m.predict_all(u, i).unwrap();
                        fwd.probs
                            .iter()
                            .zip(weights)
                            .map(|(y, w)| w * (y - 0.3) * (y - 0.3))
                            .sum::<f64>()
                    })
                    .sum()
            };

            for &(u, i) in &pairs {
                let fwd = model.predict_all(u, i).unwrap();
                let upstream: Vec<f64> = fwd
                    .probs
                    .iter()
                    .zip(weights)
                    .map(|(y, w)| 2.0 * w * (y - 0.3))
                    .collect();
                model.backward(&fwd, &upstream);
            }
            let analytic: Vec<Vec<f64>> =
                model.params().iter().map(|p| p.grad.data().to_vec()).collect();
            let numeric = finite_diff_grad(&mut model, |m| loss(m), 1e-5);
            for ((a, n), param) in analytic.iter().zip(&numeric).zip(model.params()) {
                let err = max_relative_error(a, n);
                assert!(err < 1e-4, "{kind} param {}: err {err}", param.name);
            }
        }
    }
}
