use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::BehaviorDataset;

/// Inclusive range of target-behavior interaction counts, e.g. `5-8` or the
/// open-ended `>20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountRange {
    pub min: u32,
    pub max: Option<u32>,
}

impl CountRange {
    pub fn bounded(min: u32, max: u32) -> Result<Self> {
        if min > max {
            return Err(Error::Config(format!("range {min}-{max} is inverted")));
        }
        Ok(CountRange { min, max: Some(max) })
    }

    pub fn at_least(min: u32) -> Self {
        CountRange { min, max: None }
    }

    pub fn contains(&self, count: u32) -> bool {
        count >= self.min && self.max.map_or(true, |mx| count <= mx)
    }
}

impl fmt::Display for CountRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max {
            Some(mx) => write!(f, "{}-{}", self.min, mx),
            None if self.min > 0 => write!(f, ">{}", self.min - 1),
            None => write!(f, "0+"),
        }
    }
}

impl FromStr for CountRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse count range `{s}`"));
        if let Some(rest) = s.strip_prefix('>') {
            let n: u32 = rest.trim().parse().map_err(|_| bad())?;
            return Ok(CountRange::at_least(n + 1));
        }
        if let Some(rest) = s.strip_suffix('+') {
            let n: u32 = rest.trim().parse().map_err(|_| bad())?;
            return Ok(CountRange::at_least(n));
        }
        if let Some((lo, hi)) = s.split_once('-') {
            let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
            return CountRange::bounded(lo, hi);
        }
        let n: u32 = s.parse().map_err(|_| bad())?;
        CountRange::bounded(n, n)
    }
}

impl TryFrom<String> for CountRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CountRange> for String {
    fn from(r: CountRange) -> Self {
        r.to_string()
    }
}

fn validate_bounds(bounds: &[CountRange]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Config("sparsity bounds are empty".into()));
    }
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        match a.max {
            None => {
                return Err(Error::Config(format!(
                    "open-ended range {a} must come last"
                )))
            }
            Some(mx) if b.min <= mx => {
                return Err(Error::Config(format!("ranges {a} and {b} overlap")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Assigns each user to the range containing their target-behavior
/// interaction count; users outside every range are left unassigned. Group
/// labels are the range displays, and every declared group is present in the
/// output (possibly empty).
pub fn sparsity_groups(
    ds: &BehaviorDataset,
    bounds: &[CountRange],
) -> Result<BTreeMap<String, Vec<u32>>> {
    validate_bounds(bounds)?;
    let target = ds.target();
    let mut groups: BTreeMap<String, Vec<u32>> = bounds
        .iter()
        .map(|r| (r.to_string(), Vec::new()))
        .collect();
    for u in 0..ds.num_users() as u32 {
        let count = target.items_of(u).len() as u32;
        if let Some(range) = bounds.iter().find(|r| r.contains(count)) {
            groups.get_mut(&range.to_string()).expect("group exists").push(u);
        }
    }
    Ok(groups)
}
