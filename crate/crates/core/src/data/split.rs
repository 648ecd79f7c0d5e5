use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Cycle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// -1C discharges train; -2C and -3C discharges test.
    SandiaCRate,
    /// All `mixed` cycles but the last (by id) train; the held-out mixed
    /// cycle and every other profile test.
    LgMixed,
    Explicit { train: Vec<String>, test: Vec<String> },
}

/// Partitions cycles into disjoint train and test lists, each in input order.
pub fn split_dataset(cycles: &[Cycle], policy: &SplitPolicy) -> Result<(Vec<Cycle>, Vec<Cycle>)> {
    let (train, test): (Vec<&Cycle>, Vec<&Cycle>) = match policy {
        SplitPolicy::SandiaCRate => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for c in cycles {
                let rate = c.meta.c_rate_discharge.ok_or_else(|| {
                    Error::Config(format!("cycle {} has no discharge C-rate", c.id))
                })?;
                let near = |r: f64| (rate - r).abs() < 0.05;
                if near(-1.0) {
                    train.push(c);
                } else if near(-2.0) || near(-3.0) {
                    test.push(c);
                } else {
                    log::warn!("cycle {} at {rate}C fits neither split; skipped", c.id);
                }
            }
            (train, test)
        }
        SplitPolicy::LgMixed => {
            let is_mixed = |c: &Cycle| c.meta.profile.as_deref() == Some("mixed");
            let held_out = cycles
                .iter()
                .filter(|c| is_mixed(c))
                .map(|c| c.id.as_str())
                .max()
                .ok_or_else(|| Error::Config("no cycles with profile \"mixed\"".into()))?;
            cycles
                .iter()
                .partition(|c| is_mixed(c) && c.id != held_out)
        }
        SplitPolicy::Explicit { train, test } => {
            let train_ids: BTreeSet<&str> = train.iter().map(String::as_str).collect();
            let test_ids: BTreeSet<&str> = test.iter().map(String::as_str).collect();
            if let Some(id) = train_ids.intersection(&test_ids).next() {
                return Err(Error::Config(format!("cycle {id} listed in both train and test")));
            }
            let known: BTreeSet<&str> = cycles.iter().map(|c| c.id.as_str()).collect();
            if let Some(id) = train_ids.union(&test_ids).find(|id| !known.contains(*id)) {
                return Err(Error::Config(format!("unknown cycle {id} in split lists")));
            }
            (
                cycles.iter().filter(|c| train_ids.contains(c.id.as_str())).collect(),
                cycles.iter().filter(|c| test_ids.contains(c.id.as_str())).collect(),
            )
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split policy produced {} train and {} test cycles",
            train.len(),
            test.len()
        )));
    }
    Ok((train.into_iter().cloned().collect(), test.into_iter().cloned().collect()))
}
