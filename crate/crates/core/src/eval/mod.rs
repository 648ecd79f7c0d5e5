//! Evaluation protocol: per-horizon MAE tables, the Physics-Only baseline,
//! autoregressive rollouts, and file emission.

mod report;
mod rollout;

pub use report::{emit_report, emit_rollout};
pub use rollout::{rollout, RolloutMode, RolloutResult, RolloutStart};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{build_examples, Cycle, TrainingExample};
use crate::error::{Error, Result};
use crate::model::TwoBranchModel;
use crate::physics::{coulomb_count, HorizonSet};
use crate::train::Stat;

/// Config label used for the model-free baseline.
pub const PHYSICS_ONLY: &str = "Physics-Only";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMode {
    /// Branch 1 output fed to Branch 2.
    Cascaded,
    /// Ground-truth SoC(t) fed to Branch 2.
    TeacherForced,
    /// Branch 1 against SoC(t).
    Branch1Only,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cascaded => "cascaded",
            Self::TeacherForced => "teacher-forced",
            Self::Branch1Only => "branch1-only",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cascaded" => Ok(Self::Cascaded),
            "teacher-forced" | "teacher_forced" => Ok(Self::TeacherForced),
            "branch1-only" | "branch1_only" | "branch1" => Ok(Self::Branch1Only),
            other => Err(Error::Config(format!(
                "mode must be cascaded, teacher-forced or branch1-only, got `{other}`"
            ))),
        }
    }
}

impl Serialize for EvalMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EvalMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Unclamped predictions and their targets for one example set.
pub fn predictions(
    model: &TwoBranchModel,
    examples: &[TrainingExample],
    mode: EvalMode,
) -> Result<Vec<(f64, f64)>> {
    examples
        .iter()
        .map(|e| {
            Ok(match mode {
                EvalMode::Branch1Only => {
                    (model.estimate_soc_now(e.voltage_v, e.current_a, e.temp_c)?, e.soc_now)
                }
                EvalMode::TeacherForced => (
                    model.predict_soc_future(e.soc_now, e.i_avg, e.temp_avg, e.horizon_s)?,
                    e.soc_future,
                ),
                EvalMode::Cascaded => {
                    let (_, f) = model.predict_cascaded(
                        e.voltage_v,
                        e.current_a,
                        e.temp_c,
                        e.i_avg,
                        e.temp_avg,
                        e.horizon_s,
                    )?;
                    (f, e.soc_future)
                }
            })
        })
        .collect()
}

/// `(clamped MAE, raw MAE)` of prediction/target pairs.
pub fn mae_of(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("MAE over an empty set".into()));
    }
    let n = pairs.len() as f64;
    let clamped = pairs.iter().map(|(p, t)| (p.clamp(0.0, 1.0) - t).abs()).sum::<f64>() / n;
    let raw = pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok((clamped, raw))
}

/// MAE with predictions clamped to `[0, 1]`.
pub fn eval_mae(model: &TwoBranchModel, examples: &[TrainingExample], mode: EvalMode) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples to evaluate".into()));
    }
    Ok(mae_of(&predictions(model, examples, mode)?)?.0)
}

/// Coulomb counting from the ground-truth SoC at the window start. Uses no
/// learned parameters.
pub fn physics_only_predict(soc_now: f64, i_avg: f64, horizon_s: f64, c_rated_ah: f64) -> Result<f64> {
    coulomb_count(soc_now, i_avg, horizon_s, c_rated_ah)
}

/// Physics-Only prediction/target pairs for examples drawn from a cycle rated `c_rated_ah`.
pub fn physics_only_predictions(examples: &[TrainingExample], c_rated_ah: f64) -> Result<Vec<(f64, f64)>> {
    examples
        .iter()
        .map(|e| Ok((physics_only_predict(e.soc_now, e.i_avg, e.horizon_s, c_rated_ah)?, e.soc_future)))
        .collect()
}

/// A trained model under a config label such as `PINN-All`.
#[derive(Debug, Clone, Copy)]
pub struct ModelEntry<'a> {
    pub config: &'a str,
    pub seed: Option<u64>,
    pub model: &'a TwoBranchModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub config: String,
    pub seed: Option<u64>,
    pub mode: EvalMode,
    pub horizon_s: f64,
    pub n_examples: usize,
    /// MAE of predictions clamped to `[0, 1]`.
    pub mae: f64,
    /// MAE of the unclamped predictions.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config: String,
    pub mode: EvalMode,
    pub horizon_s: f64,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Storage and arithmetic cost of the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCost {
    pub branch1_params: usize,
    pub branch2_params: usize,
    pub total_params: usize,
    /// Parameter storage at 32 bits per value.
    pub bytes_f32: usize,
    /// Weight multiply-accumulates per forward pass.
    pub branch1_macs: usize,
    pub branch2_macs: usize,
    /// Multiply-accumulates plus bias additions per forward pass.
    pub branch1_ops: usize,
    pub branch2_ops: usize,
    pub total_ops: usize,
}

impl ModelCost {
    pub fn of(model: &TwoBranchModel) -> Self {
        let (b1, b2) = (model.branch1(), model.branch2());
        let ops = |m: &crate::nn::Mlp| m.mac_count() + m.layers().iter().map(|l| l.out_dim()).sum::<usize>();
        Self {
            branch1_params: b1.param_count(),
            branch2_params: b2.param_count(),
            total_params: model.param_count(),
            bytes_f32: model.param_count() * 4,
            branch1_macs: b1.mac_count(),
            branch2_macs: b2.mac_count(),
            branch1_ops: ops(b1),
            branch2_ops: ops(b2),
            total_ops: ops(b1) + ops(b2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub horizons: Vec<f64>,
    pub config_hash: String,
    pub cost: Option<ModelCost>,
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl EvalReport {
    pub fn empty(dataset: &str) -> Self {
        Self {
            dataset: dataset.into(),
            horizons: Vec::new(),
            config_hash: hash_hex(b""),
            cost: None,
            rows: Vec::new(),
            aggregates: Vec::new(),
        }
    }

    /// Rows for one (config, mode, horizon) cell.
    pub fn cell(&self, config: &str, mode: EvalMode, horizon_s: f64) -> impl Iterator<Item = &EvalRow> {
        let config = config.to_string();
        self.rows
            .iter()
            .filter(move |r| r.config == config && r.mode == mode && r.horizon_s == horizon_s)
    }

    pub fn aggregate(&self, config: &str, mode: EvalMode, horizon_s: f64) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.config == config && a.mode == mode && a.horizon_s == horizon_s)
    }
}

fn hash_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Mean and spread over seeds for every (config, mode, horizon) cell, in
/// first-appearance order.
pub fn aggregate_rows(rows: &[EvalRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(&str, EvalMode, f64)> = Vec::new();
    for r in rows {
        let k = (r.config.as_str(), r.mode, r.horizon_s);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(config, mode, horizon_s)| {
            let maes: Vec<f64> = rows
                .iter()
                .filter(|r| r.config == config && r.mode == mode && r.horizon_s == horizon_s)
                .map(|r| r.mae)
                .collect();
            let s = Stat::of(&maes).expect("key comes from a row");
            AggregateRow {
                config: config.into(),
                mode,
                horizon_s,
                n_seeds: maes.len(),
                mean: s.mean,
                std: s.std,
            }
        })
        .collect()
}

/// Evaluates every model at every horizon and mode, plus the Physics-Only
/// baseline for the Branch 2 modes.
///
/// Examples for each horizon are built from every test cycle and pooled.
pub fn multi_horizon_eval(
    models: &[ModelEntry<'_>],
    test_cycles: &[Cycle],
    horizons: &HorizonSet,
    modes: &[EvalMode],
    dataset: &str,
) -> Result<EvalReport> {
    if test_cycles.is_empty() {
        return Err(Error::Config("no test cycles".into()));
    }
    if modes.is_empty() {
        return Err(Error::Config("no evaluation modes".into()));
    }
    let mut hasher = Sha256::new();
    hasher.update(dataset.as_bytes());
    for h in horizons.as_slice() {
        hasher.update(h.to_le_bytes());
    }
    for m in modes {
        hasher.update(m.as_str().as_bytes());
    }
    for e in models {
        hasher.update(e.config.as_bytes());
        hasher.update(format!("{:?}", e.seed).as_bytes());
        hasher.update(e.model.to_json().as_bytes());
    }

    let mut rows = Vec::new();
    for &h in horizons.as_slice() {
        let per_cycle: Vec<(Vec<TrainingExample>, f64)> = test_cycles
            .iter()
            .map(|c| Ok((build_examples(c, h)?, c.meta.c_rated_ah)))
            .collect::<Result<_>>()?;
        let examples: Vec<TrainingExample> = per_cycle.iter().flat_map(|(e, _)| e.iter().copied()).collect();
        if examples.is_empty() {
            return Err(Error::Config(format!("test cycles are too short for a {h} s horizon")));
        }
        for &mode in modes {
            for e in models {
                if !e.model.horizon_in_range(h) && mode != EvalMode::Branch1Only {
                    log::warn!("{}: horizon {h} s lies outside the trained horizon range", e.config);
                }
                let (mae, raw) = mae_of(&predictions(e.model, &examples, mode)?)?;
                rows.push(EvalRow {
                    config: e.config.into(),
                    seed: e.seed,
                    mode,
                    horizon_s: h,
                    n_examples: examples.len(),
                    mae,
                    raw,
                });
            }
            if mode != EvalMode::Branch1Only {
                let mut pairs = Vec::with_capacity(examples.len());
                for (ex, c_rated) in &per_cycle {
                    pairs.extend(physics_only_predictions(ex, *c_rated)?);
                }
                let (mae, raw) = mae_of(&pairs)?;
                rows.push(EvalRow {
                    config: PHYSICS_ONLY.into(),
                    seed: None,
                    mode,
                    horizon_s: h,
                    n_examples: pairs.len(),
                    mae,
                    raw,
                });
            }
        }
    }
    let aggregates = aggregate_rows(&rows);
    Ok(EvalReport {
        dataset: dataset.into(),
        horizons: horizons.as_slice().to_vec(),
        config_hash: hex::encode(hasher.finalize()),
        cost: models.first().map(|e| ModelCost::of(e.model)),
        rows,
        aggregates,
    })
}
