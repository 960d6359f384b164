//! Versioned JSON parameter manifests shared by every model family. A
//! checkpoint records the model's registered name, the behavior schema and
//! shape metadata, and one named record per parameter; loading rebuilds the
//! model and fills parameters by name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{CmfModel, SingleBehaviorModel};
use crate::data::BehaviorSchema;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::kernel::{DenseMatrix, Param, Parameterized};
use crate::model::{ModelConfig, NmtrModel};
use crate::units::UnitKind;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ParamRecord {
    fn from_param(p: &Param) -> Self {
        ParamRecord {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            values: p.value.data().to_vec(),
        }
    }
}

/// Serialized model: shape metadata plus named parameter records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Registered model name, e.g. `nmtr-gmf`, `neumf`, `bpr`, `cmf`.
    pub model: String,
    pub schema: Vec<String>,
    pub num_users: usize,
    pub num_items: usize,
    pub embedding_size: usize,
    /// One entry per behavior level for cascade models, one entry for
    /// single-behavior models, empty for CMF and plain MF.
    pub unit_kinds: Vec<UnitKind>,
    pub mlp_layers: usize,
    pub mlp_final_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_weights: Option<Vec<f64>>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    fn fill_params(&self, targets: Vec<&mut Param>) -> Result<()> {
        let records: HashMap<&str, &ParamRecord> = self
            .params
            .iter()
            .map(|r| (r.name.as_str(), r))
            .collect();
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint("duplicate parameter names".into()));
        }
        let mut used = 0usize;
        for target in targets {
            let record = records.get(target.name.as_str()).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter `{}`", target.name))
            })?;
            if (record.rows, record.cols) != target.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {}x{}, expected {:?}",
                    target.name, record.rows, record.cols,
                    target.value.shape()
                )));
            }
            let matrix = DenseMatrix::from_vec(record.rows, record.cols, record.values.clone())
                .map_err(|_| Error::Checkpoint(format!("bad data for `{}`", target.name)))?;
            target.value = matrix;
            target.zero_grad();
            used += 1;
        }
        if used != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model consumes {used}",
                self.params.len()
            )));
        }
        Ok(())
    }
}

pub fn from_nmtr(model: &NmtrModel, name: &str) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        model: name.to_string(),
        schema: model.schema().names().to_vec(),
        num_users: model.embeddings.num_users(),
        num_items: model.embeddings.num_items(),
        embedding_size: model.embedding_dim(),
        unit_kinds: model.units.iter().map(|u| u.kind()).collect(),
        mlp_layers: model.units.iter().map(|u| u.num_layers()).max().unwrap_or(0),
        mlp_final_width: model
            .units
            .iter()
            .map(|u| u.final_width())
            .next()
            .unwrap_or(0),
        behavior_weights: None,
        params: model.params().iter().map(|p| ParamRecord::from_param(p)).collect(),
    }
}

pub fn to_nmtr(ck: &Checkpoint) -> Result<NmtrModel> {
    let schema = BehaviorSchema::new(ck.schema.clone())?;
    if ck.unit_kinds.len() != schema.num_behaviors() {
        return Err(Error::Checkpoint(format!(
            "{} unit kinds for {} behaviors",
            ck.unit_kinds.len(),
            schema.num_behaviors()
        )));
    }
    let uniform = ck.unit_kinds.iter().all(|k| *k == ck.unit_kinds[0]);
    if !uniform {
        return Err(Error::Checkpoint(
            "heterogeneous unit cascades are not representable in this manifest".into(),
        ));
    }
    let config = ModelConfig {
        unit: ck.unit_kinds[0],
        embedding_size: ck.embedding_size,
        mlp_layers: ck.mlp_layers.max(1),
        mlp_final_width: Some(ck.mlp_final_width.max(1)),
        seed: 0,
    };
    let mut model = NmtrModel::new(schema, ck.num_users, ck.num_items, &config)?;
    ck.fill_params(model.params_mut())?;
    Ok(model)
}

pub fn from_single(model: &SingleBehaviorModel, name: &str, schema: &BehaviorSchema) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        model: name.to_string(),
        schema: schema.names().to_vec(),
        num_users: model.num_users(),
        num_items: model.num_items(),
        embedding_size: model.embeddings.dim(),
        unit_kinds: vec![model.unit.kind()],
        mlp_layers: model.unit.num_layers(),
        mlp_final_width: model.unit.final_width(),
        behavior_weights: None,
        params: model
            .all_params()
            .iter()
            .map(|p| ParamRecord::from_param(p))
            .collect(),
    }
}

pub fn to_single(ck: &Checkpoint) -> Result<SingleBehaviorModel> {
    let kind = *ck
        .unit_kinds
        .first()
        .ok_or_else(|| Error::Checkpoint("missing unit kind".into()))?;
    let config = ModelConfig {
        unit: kind,
        embedding_size: ck.embedding_size,
        mlp_layers: ck.mlp_layers.max(1),
        mlp_final_width: Some(ck.mlp_final_width.max(1)),
        seed: 0,
    };
    let mut model = SingleBehaviorModel::new(ck.num_users, ck.num_items, &config);
    ck.fill_params(model.all_params_mut())?;
    if matches!(ck.model.as_str(), "bpr" | "mc-bpr") {
        model.freeze_output_weight();
    }
    Ok(model)
}

pub fn from_cmf(model: &CmfModel, schema: &BehaviorSchema) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        model: "cmf".to_string(),
        schema: schema.names().to_vec(),
        num_users: model.users[0].value.rows(),
        num_items: model.item.value.rows(),
        embedding_size: model.embedding_dim(),
        unit_kinds: vec![],
        mlp_layers: 0,
        mlp_final_width: 0,
        behavior_weights: Some(model.weights.clone()),
        params: model.params().iter().map(|p| ParamRecord::from_param(p)).collect(),
    }
}

pub fn to_cmf(ck: &Checkpoint) -> Result<CmfModel> {
    let weights = ck
        .behavior_weights
        .clone()
        .ok_or_else(|| Error::Checkpoint("cmf checkpoint lacks behavior weights".into()))?;
    let mut model = CmfModel::new(
        ck.num_users,
        ck.num_items,
        ck.schema.len(),
        ck.embedding_size,
        weights,
        0,
    )?;
    ck.fill_params(model.params_mut())?;
    Ok(model)
}

/// A model reconstructed from a checkpoint, usable as a ranking scorer.
pub enum LoadedModel {
    Nmtr(NmtrModel),
    Single(SingleBehaviorModel),
    Cmf(CmfModel),
}

impl LoadedModel {
    pub fn model_name(ck: &Checkpoint) -> &str {
        &ck.model
    }
}

/// Rebuilds whichever model family the checkpoint's registered name denotes.
pub fn load_model(ck: &Checkpoint) -> Result<LoadedModel> {
    if ck.model.starts_with("nmtr-") {
        Ok(LoadedModel::Nmtr(to_nmtr(ck)?))
    } else if ck.model == "cmf" {
        Ok(LoadedModel::Cmf(to_cmf(ck)?))
    } else {
        Ok(LoadedModel::Single(to_single(ck)?))
    }
}

impl Scorer for LoadedModel {
    fn score(&self, user: u32, item: u32) -> f64 {
        match self {
            LoadedModel::Nmtr(m) => m.score(user, item),
            LoadedModel::Single(m) => Scorer::score(m, user, item),
            LoadedModel::Cmf(m) => Scorer::score(m, user, item),
        }
    }
}
