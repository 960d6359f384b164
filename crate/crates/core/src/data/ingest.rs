use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BehaviorDataset, BehaviorSchema, InteractionSet, KeyIndex};

/// Column names for the four required fields of an interaction log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub user: String,
    pub item: String,
    pub behavior: String,
    pub timestamp: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            user: "user".into(),
            item: "item".into(),
            behavior: "behavior".into(),
            timestamp: "timestamp".into(),
        }
    }
}

/// Reads a UTF-8, comma-delimited interaction log with a header row.
///
/// Duplicate (user, item, behavior) rows collapse to the earliest timestamp.
/// Users and items receive dense indices in first-seen row order.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &BehaviorSchema,
    columns: &ColumnMap,
) -> Result<BehaviorDataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(&display, std::io::Error::other(e.to_string()))
            }
            _ => Error::MalformedRow {
                line: 1,
                reason: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column `{name}` in {display}")))
    };
    let user_col = col(&columns.user)?;
    let item_col = col(&columns.item)?;
    let behavior_col = col(&columns.behavior)?;
    let ts_col = col(&columns.timestamp)?;

    let mut users = KeyIndex::new();
    let mut items = KeyIndex::new();
    let mut raw: Vec<Vec<(u32, u32, i64)>> = vec![Vec::new(); schema.num_behaviors()];
    let mut rows = 0u64;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::MalformedRow {
                line,
                reason: format!("missing field {idx}"),
            })
        };
        let user_key = field(user_col)?;
        let item_key = field(item_col)?;
        let behavior = field(behavior_col)?;
        let ts_field = field(ts_col)?;
        if user_key.is_empty() || item_key.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty user or item key".into(),
            });
        }
        let ts: i64 = ts_field.trim().parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("timestamp `{ts_field}` is not an integer"),
        })?;
        if ts < 0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("negative timestamp {ts}"),
            });
        }
        let level = schema.index_of(behavior).ok_or_else(|| Error::UnknownBehavior {
            label: behavior.to_string(),
            line,
        })?;
        let u = users.insert_or_get(user_key);
        let i = items.insert_or_get(item_key);
        raw[level].push((u, i, ts));
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::EmptyInput(format!("{display} has no data rows")));
    }

    let num_users = users.len();
    let behaviors = raw
        .into_iter()
        .map(|entries| InteractionSet::from_timestamped(entries, num_users))
        .collect();
    BehaviorDataset::new(schema.clone(), users, items, behaviors)
}

/// Writes the dataset back out as an interaction log with the given column
/// names. Rows are emitted behavior by behavior in canonical pair order, so
/// re-ingesting the file reproduces the dataset exactly; sets without
/// timestamps are written with timestamp 0.
pub fn export_csv(
    ds: &BehaviorDataset,
    path: impl AsRef<Path>,
    columns: &ColumnMap,
) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::io(&display, std::io::Error::other(e.to_string())))?;
    let io_err = |e: csv::Error| Error::io(&display, std::io::Error::other(e.to_string()));
    writer
        .write_record([
            columns.user.as_str(),
            columns.item.as_str(),
            columns.behavior.as_str(),
            columns.timestamp.as_str(),
        ])
        .map_err(io_err)?;
    for (level, set) in ds.behaviors().iter().enumerate() {
        let name = ds.schema().name(level);
        for (k, &(u, i)) in set.pairs().iter().enumerate() {
            let ts = set.timestamps().map(|t| t[k]).unwrap_or(0);
            writer
                .write_record([
                    ds.users().key(u),
                    ds.items().key(i),
                    name,
                    &ts.to_string(),
                ])
                .map_err(io_err)?;
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(&display, e))?;
    Ok(())
}
