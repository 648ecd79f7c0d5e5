//! Split two-branch training.
//!
//! Branch 1 learns present SoC from `(V, I, T)`. Branch 2 is then trained with
//! ground-truth SoC as its input (teacher forcing) on a data term at the
//! dataset horizon plus a Coulomb-counting term at freshly sampled synthetic
//! conditions. Branch 1 is never evaluated while Branch 2 trains.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{build_example_set, compute_norm_stats, Cycle, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{write_atomic, TwoBranchModel};
use crate::nn::{mae_loss, Gradients, Mlp, OptimizerConfig, OptimizerState};
use crate::physics::{physics_loss, ConditionSampler, HorizonSet, PhysicsMode, SamplingPool};
use crate::rng::{stream, Stream};

/// Where physics-loss currents or temperatures are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolSpec {
    /// Every value observed in the training split.
    Empirical,
    /// Uniform over the training split's observed range.
    ObservedRange,
    Values { values: Vec<f64> },
    Uniform { min: f64, max: f64 },
}

/// Switches that exist for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugFlags {
    /// Include the data term in the Branch 2 loss.
    pub data_term: bool,
    /// Train both branches together on the cascaded output, letting
    /// gradients flow from Branch 2 into Branch 1.
    pub joint: bool,
}

impl Default for DebugFlags {
    fn default() -> Self {
        Self {
            data_term: true,
            joint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Horizon of the supervised windows. Defaults to one sampling period.
    pub data_horizon_s: Option<f64>,
    /// Horizons for the physics term. Defaults to `N, 2N, 3N`.
    pub physics_horizons: Option<HorizonSet>,
    pub physics_mode: PhysicsMode,
    pub physics_weight: f64,
    pub current_pool: PoolSpec,
    pub temp_pool: PoolSpec,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub validation_fraction: f64,
    pub debug: DebugFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            data_horizon_s: None,
            physics_horizons: None,
            physics_mode: PhysicsMode::All,
            physics_weight: 1.0,
            current_pool: PoolSpec::Empirical,
            temp_pool: PoolSpec::ObservedRange,
            patience: 20,
            validation_fraction: 0.1,
            debug: DebugFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        if !(self.physics_weight >= 0.0 && self.physics_weight.is_finite()) {
            return Err(Error::Config(format!(
                "physics weight must be non-negative, got {}",
                self.physics_weight
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(h) = self.data_horizon_s {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("data horizon must be positive, got {h}")));
            }
        }
        if let PhysicsMode::Single(h) = self.physics_mode {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("physics horizon must be positive, got {h}")));
            }
        }
        if !self.debug.data_term && self.physics_mode == PhysicsMode::Off {
            return Err(Error::Config("data term disabled with physics off leaves no loss".into()));
        }
        Ok(())
    }

    /// Display name of the configuration: `No-PINN`, `PINN-All` or `PINN-<h>s`.
    pub fn label(&self) -> String {
        match self.physics_mode {
            PhysicsMode::Off => "No-PINN".into(),
            PhysicsMode::All => "PINN-All".into(),
            PhysicsMode::Single(h) => format!("PINN-{h}s"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "training config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills the dataset-dependent defaults.
    pub fn resolve(&self, train_cycles: &[Cycle]) -> Result<TrainConfig> {
        self.validate()?;
        let first = train_cycles
            .first()
            .ok_or_else(|| Error::Config("no training cycles".into()))?;
        let mut out = self.clone();
        let n = self.data_horizon_s.unwrap_or(first.meta.sampling_period_s);
        out.data_horizon_s = Some(n);
        if out.physics_horizons.is_none() {
            out.physics_horizons = Some(HorizonSet::new(vec![n, 2.0 * n, 3.0 * n])?);
        }
        Ok(out)
    }

    fn data_horizon(&self) -> Result<f64> {
        self.data_horizon_s
            .ok_or_else(|| Error::Config("training config is not resolved".into()))
    }

    /// Every horizon the model is expected to handle, for normalization.
    fn horizon_envelope(&self) -> Result<HorizonSet> {
        let mut hs = vec![self.data_horizon()?];
        if let Some(p) = &self.physics_horizons {
            hs.extend_from_slice(p.as_slice());
        }
        if let PhysicsMode::Single(h) = self.physics_mode {
            hs.push(h);
        }
        hs.sort_by(f64::total_cmp);
        hs.dedup();
        HorizonSet::new(hs)
    }
}

fn resolve_pool(spec: &PoolSpec, observed: &[f64], what: &str) -> Result<SamplingPool> {
    let pool = match spec {
        PoolSpec::Empirical => SamplingPool::Values {
            values: observed.to_vec(),
        },
        PoolSpec::ObservedRange => {
            let (min, max) = observed
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            SamplingPool::Uniform { min, max }
        }
        PoolSpec::Values { values } => SamplingPool::Values {
            values: values.clone(),
        },
        PoolSpec::Uniform { min, max } => SamplingPool::Uniform {
            min: *min,
            max: *max,
        },
    };
    pool.validate(what)?;
    Ok(pool)
}

/// Builds the physics condition sampler for a resolved config, or `None`
/// when the physics term is off.
pub fn condition_sampler(
    config: &TrainConfig,
    train_cycles: &[Cycle],
    c_rated_ah: f64,
) -> Result<Option<ConditionSampler>> {
    if config.physics_mode == PhysicsMode::Off {
        return Ok(None);
    }
    let samples = train_cycles.iter().flat_map(|c| &c.samples);
    let currents: Vec<f64> = samples.clone().map(|s| s.current_a).collect();
    let temps: Vec<f64> = samples.map(|s| s.temp_c).collect();
    let horizons = match (&config.physics_horizons, config.physics_mode) {
        (Some(h), _) => h.clone(),
        (None, PhysicsMode::Single(h)) => HorizonSet::new(vec![h])?,
        (None, _) => return Err(Error::Config("physics horizons unresolved".into())),
    };
    let sampler = ConditionSampler {
        current_pool: resolve_pool(&config.current_pool, &currents, "current")?,
        temp_pool: resolve_pool(&config.temp_pool, &temps, "temperature")?,
        horizons,
        mode: config.physics_mode,
        c_rated_ah,
    };
    sampler.validate()?;
    Ok(Some(sampler))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Branch1,
    Branch2,
    Joint,
}

impl Phase {
    fn index(self) -> u64 {
        match self {
            Phase::Branch1 => 1,
            Phase::Branch2 => 2,
            Phase::Joint => 3,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Phase::Branch1 => "branch1",
            Phase::Branch2 => "branch2",
            Phase::Joint => "joint",
        }
    }
}

/// Losses of one completed epoch. Fields that do not apply to the phase are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub branch1_train_mae: Option<f64>,
    pub branch1_val_mae: Option<f64>,
    pub branch2_data_loss: Option<f64>,
    pub branch2_physics_loss: Option<f64>,
    /// Validation objective used for early stopping in Branch 2 and joint phases.
    pub branch2_val_loss: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |r| r.phase == phase)
    }

    pub fn extend(&mut self, other: TrainHistory) {
        self.epochs.extend(other.epochs);
    }

    pub fn wall_time_s(&self) -> f64 {
        self.epochs.iter().map(|r| r.wall_time_s).sum()
    }

    /// One row per epoch. Wall time is left out so that reruns produce
    /// identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "phase,epoch,branch1_train_mae,branch1_val_mae,branch2_data_loss,branch2_physics_loss,branch2_val_loss\n",
        );
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.phase.as_str(),
                r.epoch,
                cell(r.branch1_train_mae),
                cell(r.branch1_val_mae),
                cell(r.branch2_data_loss),
                cell(r.branch2_physics_loss),
                cell(r.branch2_val_loss),
            );
        }
        out
    }
}

/// Splits examples into (train, validation), drawing the same fraction from
/// every source cycle.
pub fn split_validation(
    examples: &[TrainingExample],
    fraction: f64,
    seed: u64,
) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    if fraction <= 0.0 {
        return (examples.to_vec(), Vec::new());
    }
    let mut groups: Vec<usize> = examples.iter().map(|e| e.group).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut is_val = vec![false; examples.len()];
    for g in groups {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&k| examples[k].group == g).collect();
        let take = (fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut stream(seed, Stream::Validation, &[g as u64]));
        for &k in &idx[..take] {
            is_val[k] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (e, v) in examples.iter().zip(is_val) {
        if v { val.push(*e) } else { train.push(*e) }
    }
    (train, val)
}

/// Tracks the best validation score and decides when to stop.
struct EarlyStop {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns `(improved, stop)`.
    fn observe(&mut self, score: f64) -> (bool, bool) {
        if score < self.best {
            self.best = score;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.patience > 0 && self.stale >= self.patience)
        }
    }
}

fn shuffled_batches(n: usize, batch: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Shuffle, &[phase.index(), epoch as u64]));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn branch1_batch(model: &TwoBranchModel, batch: &[&TrainingExample]) -> Result<(f64, Gradients)> {
    let net = model.branch1();
    let mut preds = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for e in batch {
        let x = model.branch1_input(e.voltage_v, e.current_a, e.temp_c)?;
        model.note_branch1_call();
        let (y, cache) = net.forward(&x)?;
        preds.push(y);
        caches.push(cache);
    }
    let targets: Vec<f64> = batch.iter().map(|e| e.soc_now).collect();
    let (loss, d) = mae_loss(&preds, &targets)?;
    let mut grads = Gradients::zeros_like(net);
    for (cache, &d) in caches.iter().zip(&d) {
        if d != 0.0 {
            grads.add_scaled(&net.backward(cache, d)?.0, 1.0)?;
        }
    }
    Ok((loss, grads))
}

fn branch2_data_batch(model: &TwoBranchModel, batch: &[&TrainingExample]) -> Result<(f64, Gradients)> {
    let net = model.branch2();
    let mut preds = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for e in batch {
        let x = model.branch2_input(e.soc_now, e.i_avg, e.temp_avg, e.horizon_s)?;
        let (y, cache) = net.forward(&x)?;
        preds.push(y);
        caches.push(cache);
    }
    let targets: Vec<f64> = batch.iter().map(|e| e.soc_future).collect();
    let (loss, d) = mae_loss(&preds, &targets)?;
    let mut grads = Gradients::zeros_like(net);
    for (cache, &d) in caches.iter().zip(&d) {
        if d != 0.0 {
            grads.add_scaled(&net.backward(cache, d)?.0, 1.0)?;
        }
    }
    Ok((loss, grads))
}

/// Mean absolute Branch 1 error, unclamped.
pub fn branch1_mae(model: &TwoBranchModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples".into()));
    }
    let mut acc = 0.0;
    for e in examples {
        acc += (model.estimate_soc_now(e.voltage_v, e.current_a, e.temp_c)? - e.soc_now).abs();
    }
    Ok(acc / examples.len() as f64)
}

/// Mean absolute teacher-forced Branch 2 error, unclamped.
pub fn branch2_mae(model: &TwoBranchModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples".into()));
    }
    let mut acc = 0.0;
    for e in examples {
        let p = model.predict_soc_future(e.soc_now, e.i_avg, e.temp_avg, e.horizon_s)?;
        acc += (p - e.soc_future).abs();
    }
    Ok(acc / examples.len() as f64)
}

fn check_finite(net: &Mlp, phase: Phase, epoch: usize) -> Result<()> {
    if net.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{} parameters became non-finite in epoch {epoch}",
            phase.as_str()
        )))
    }
}

/// Trains Branch 1 on `soc_now`. Branch 2 is not touched. Restores the
/// parameters with the best validation MAE when a validation split exists.
pub fn train_branch1(
    model: &mut TwoBranchModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if examples.is_empty() {
        return Err(Error::Config("no training examples for branch 1".into()));
    }
    config.validate()?;
    let (train, val) = split_validation(examples, config.validation_fraction, config.seed);
    let mut opt = OptimizerState::new(config.optimizer, model.branch1());
    let mut stop = EarlyStop::new(config.patience);
    let mut best = model.branch1().parameters();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let batches = shuffled_batches(train.len(), config.batch_size, config.seed, Phase::Branch1, epoch);
        for idx in &batches {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&k| &train[k]).collect();
            let (loss, grads) = branch1_batch(model, &batch)?;
            loss_sum += loss;
            opt.step(model.branch1_mut(), &grads)?;
        }
        check_finite(model.branch1(), Phase::Branch1, epoch)?;
        let val_mae = if val.is_empty() { None } else { Some(branch1_mae(model, &val)?) };
        history.epochs.push(EpochRecord {
            phase: Phase::Branch1,
            epoch,
            branch1_train_mae: Some(loss_sum / batches.len() as f64),
            branch1_val_mae: val_mae,
            branch2_data_loss: None,
            branch2_physics_loss: None,
            branch2_val_loss: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if let Some(v) = val_mae {
            let (improved, done) = stop.observe(v);
            if improved {
                best = model.branch1().parameters();
            }
            if done {
                log::info!("branch 1 stopped early after epoch {epoch}");
                break;
            }
        }
    }
    if !val.is_empty() && !history.epochs.is_empty() {
        model.branch1_mut().set_parameters(&best)?;
    }
    Ok(history)
}

/// Trains Branch 2 with teacher forcing on the data term plus the weighted
/// physics term. Branch 1 is neither evaluated nor updated.
pub fn train_branch2(
    model: &mut TwoBranchModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
    sampler: Option<&ConditionSampler>,
) -> Result<TrainHistory> {
    if examples.is_empty() {
        return Err(Error::Config("no training examples for branch 2".into()));
    }
    config.validate()?;
    let sampler = match (config.physics_mode, sampler) {
        (PhysicsMode::Off, _) => None,
        (_, Some(s)) => {
            s.validate()?;
            Some(s)
        }
        (_, None) => {
            return Err(Error::Config("physics term enabled without a condition sampler".into()))
        }
    };
    let use_data = config.debug.data_term;
    let w = config.physics_weight;
    let (train, val) = split_validation(examples, config.validation_fraction, config.seed);
    let val_conditions = match sampler {
        Some(s) if !val.is_empty() => {
            Some(s.sample(&mut stream(config.seed, Stream::Validation, &[u64::MAX]), val.len())?)
        }
        _ => None,
    };
    let mut opt = OptimizerState::new(config.optimizer, model.branch2());
    let mut stop = EarlyStop::new(config.patience);
    let mut best = model.branch2().parameters();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let (mut data_sum, mut phys_sum) = (0.0, 0.0);
        let batches = shuffled_batches(train.len(), config.batch_size, config.seed, Phase::Branch2, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&k| &train[k]).collect();
            let mut grads = if use_data {
                let (loss, g) = branch2_data_batch(model, &batch)?;
                data_sum += loss;
                g
            } else {
                Gradients::zeros_like(model.branch2())
            };
            if let Some(s) = sampler {
                let mut rng = stream(config.seed, Stream::Physics, &[Phase::Branch2.index(), epoch as u64, b as u64]);
                let conds = s.sample(&mut rng, batch.len())?;
                let phys = physics_loss(model, &conds)?;
                phys_sum += phys.loss;
                grads.add_scaled(&phys.branch2_grads, w)?;
            }
            opt.step(model.branch2_mut(), &grads)?;
        }
        check_finite(model.branch2(), Phase::Branch2, epoch)?;
        let nb = batches.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            let mut v = 0.0;
            if use_data {
                v += branch2_mae(model, &val)?;
            }
            if let Some(conds) = &val_conditions {
                v += w * physics_loss(model, conds)?.loss;
            }
            Some(v)
        };
        history.epochs.push(EpochRecord {
            phase: Phase::Branch2,
            epoch,
            branch1_train_mae: None,
            branch1_val_mae: None,
            branch2_data_loss: use_data.then_some(data_sum / nb),
            branch2_physics_loss: sampler.map(|_| phys_sum / nb),
            branch2_val_loss: val_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if let Some(v) = val_loss {
            let (improved, done) = stop.observe(v);
            if improved {
                best = model.branch2().parameters();
            }
            if done {
                log::info!("branch 2 stopped early after epoch {epoch}");
                break;
            }
        }
    }
    if !val.is_empty() && !history.epochs.is_empty() {
        model.branch2_mut().set_parameters(&best)?;
    }
    Ok(history)
}

/// Both branches at once on `MAE(SoC(t)) + MAE(cascaded SoC(t+N)) + w * physics`,
/// without the stop-gradient. Diagnostic alternative to the split scheme.
pub fn train_joint(
    model: &mut TwoBranchModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
    sampler: Option<&ConditionSampler>,
) -> Result<TrainHistory> {
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    config.validate()?;
    let sampler = if config.physics_mode == PhysicsMode::Off { None } else { sampler };
    let (train, val) = split_validation(examples, config.validation_fraction, config.seed);
    let mut opt1 = OptimizerState::new(config.optimizer, model.branch1());
    let mut opt2 = OptimizerState::new(config.optimizer, model.branch2());
    let mut stop = EarlyStop::new(config.patience);
    let mut best = (model.branch1().parameters(), model.branch2().parameters());
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let (mut b1_sum, mut data_sum, mut phys_sum) = (0.0, 0.0, 0.0);
        let batches = shuffled_batches(train.len(), config.batch_size, config.seed, Phase::Joint, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&k| &train[k]).collect();
            let (net1, net2) = (model.branch1(), model.branch2());
            let mut now = Vec::with_capacity(batch.len());
            let mut fut = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            for e in &batch {
                let x1 = model.branch1_input(e.voltage_v, e.current_a, e.temp_c)?;
                model.note_branch1_call();
                let (s, c1) = net1.forward(&x1)?;
                let x2 = model.branch2_input(s, e.i_avg, e.temp_avg, e.horizon_s)?;
                let (y, c2) = net2.forward(&x2)?;
                now.push(s);
                fut.push(y);
                caches.push((c1, c2));
            }
            let t_now: Vec<f64> = batch.iter().map(|e| e.soc_now).collect();
            let t_fut: Vec<f64> = batch.iter().map(|e| e.soc_future).collect();
            let (l1, d1) = mae_loss(&now, &t_now)?;
            let (l2, d2) = mae_loss(&fut, &t_fut)?;
            b1_sum += l1;
            data_sum += l2;
            let mut g1 = Gradients::zeros_like(net1);
            let mut g2 = Gradients::zeros_like(net2);
            for ((c1, c2), (&d1, &d2)) in caches.iter().zip(d1.iter().zip(&d2)) {
                let (g, dx) = net2.backward(c2, d2)?;
                g2.add_scaled(&g, 1.0)?;
                // SoC enters Branch 2 unnormalized, so dx[0] is dL/dSoC(t)
                g1.add_scaled(&net1.backward(c1, d1 + dx[0])?.0, 1.0)?;
            }
            if let Some(s) = sampler {
                let mut rng = stream(config.seed, Stream::Physics, &[Phase::Joint.index(), epoch as u64, b as u64]);
                let phys = physics_loss(model, &s.sample(&mut rng, batch.len())?)?;
                phys_sum += phys.loss;
                g2.add_scaled(&phys.branch2_grads, config.physics_weight)?;
            }
            opt1.step(model.branch1_mut(), &g1)?;
            opt2.step(model.branch2_mut(), &g2)?;
        }
        check_finite(model.branch1(), Phase::Joint, epoch)?;
        check_finite(model.branch2(), Phase::Joint, epoch)?;
        let nb = batches.len() as f64;
        let (val1, val2) = if val.is_empty() {
            (None, None)
        } else {
            let mut cascaded = 0.0;
            for e in &val {
                let (_, f) = model.predict_cascaded(e.voltage_v, e.current_a, e.temp_c, e.i_avg, e.temp_avg, e.horizon_s)?;
                cascaded += (f - e.soc_future).abs();
            }
            (Some(branch1_mae(model, &val)?), Some(cascaded / val.len() as f64))
        };
        history.epochs.push(EpochRecord {
            phase: Phase::Joint,
            epoch,
            branch1_train_mae: Some(b1_sum / nb),
            branch1_val_mae: val1,
            branch2_data_loss: Some(data_sum / nb),
            branch2_physics_loss: sampler.map(|_| phys_sum / nb),
            branch2_val_loss: val2,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if let (Some(a), Some(b)) = (val1, val2) {
            let (improved, done) = stop.observe(a + b);
            if improved {
                best = (model.branch1().parameters(), model.branch2().parameters());
            }
            if done {
                break;
            }
        }
    }
    if !val.is_empty() && !history.epochs.is_empty() {
        model.branch1_mut().set_parameters(&best.0)?;
        model.branch2_mut().set_parameters(&best.1)?;
    }
    Ok(history)
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: TwoBranchModel,
    pub history: TrainHistory,
    /// The config with every dataset-dependent default filled in.
    pub config: TrainConfig,
    pub checkpoint_path: Option<PathBuf>,
}

fn rated_capacity(cycles: &[Cycle]) -> Result<f64> {
    let c = cycles
        .first()
        .ok_or_else(|| Error::Config("no training cycles".into()))?
        .meta
        .c_rated_ah;
    if let Some(other) = cycles.iter().find(|x| (x.meta.c_rated_ah - c).abs() > 1e-9) {
        log::warn!(
            "cycle {} is rated {} Ah but the model uses {c} Ah",
            other.id,
            other.meta.c_rated_ah
        );
    }
    Ok(c)
}

/// Normalization, model construction and both training phases, in memory.
pub fn fit(train_cycles: &[Cycle], config: &TrainConfig) -> Result<TrainRun> {
    let config = config.resolve(train_cycles)?;
    for c in train_cycles {
        c.validate()?;
    }
    let n = config.data_horizon()?;
    let examples = build_example_set(train_cycles, n)?;
    if examples.is_empty() {
        return Err(Error::Config(format!("no training windows of {n} s in the training cycles")));
    }
    let norm = compute_norm_stats(train_cycles, &config.horizon_envelope()?)?;
    let c_rated = rated_capacity(train_cycles)?;
    let sampler = condition_sampler(&config, train_cycles, c_rated)?;
    let mut model = TwoBranchModel::build(norm, c_rated, config.seed)?;
    let history = if config.debug.joint {
        train_joint(&mut model, &examples, &config, sampler.as_ref())?
    } else {
        let mut h = train_branch1(&mut model, &examples, &config)?;
        h.extend(train_branch2(&mut model, &examples, &config, sampler.as_ref())?);
        h
    };
    Ok(TrainRun {
        model,
        history,
        config,
        checkpoint_path: None,
    })
}

/// [`fit`], then writes `checkpoint.json`, `history.csv` and `config.json`
/// into `out_dir`.
pub fn train_full(train_cycles: &[Cycle], config: &TrainConfig, out_dir: &Path) -> Result<TrainRun> {
    let mut run = fit(train_cycles, config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join("checkpoint.json");
    run.model.save_checkpoint(&ckpt)?;
    write_atomic(&out_dir.join("history.csv"), run.history.to_csv().as_bytes())?;
    let mut cfg = serde_json::to_string_pretty(&run.config).expect("config serializes");
    cfg.push('\n');
    write_atomic(&out_dir.join("config.json"), cfg.as_bytes())?;
    run.checkpoint_path = Some(ckpt);
    Ok(run)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// Final validation scores across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seeds: Vec<u64>,
    pub branch1_val_mae: Option<Stat>,
    pub branch2_val_loss: Option<Stat>,
}

/// Runs [`fit`] once per seed on up to `threads` threads. Results are in
/// seed order and do not depend on the thread count. With `out_dir`, each
/// run is written to `seed-<s>/` and the aggregate to `aggregate.json`.
pub fn train_seeds(
    train_cycles: &[Cycle],
    config: &TrainConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<(Vec<TrainRun>, SeedAggregate)> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let threads = threads.clamp(1, seeds.len());
    let run_one = |seed: u64| -> Result<TrainRun> {
        let cfg = TrainConfig { seed, ..config.clone() };
        match out_dir {
            Some(dir) => train_full(train_cycles, &cfg, &dir.join(format!("seed-{seed}"))),
            None => fit(train_cycles, &cfg),
        }
    };
    let mut results: Vec<Option<Result<TrainRun>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in results.chunks_mut(seeds.len().div_ceil(threads)).enumerate() {
            let base = chunk_idx * seeds.len().div_ceil(threads);
            let run_one = &run_one;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_one(seeds[base + k]));
                }
            });
        }
    });
    let runs = results
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect::<Result<Vec<_>>>()?;
    let last = |phase: Phase, f: fn(&EpochRecord) -> Option<f64>| -> Vec<f64> {
        runs.iter()
            .filter_map(|r| r.history.phase(phase).filter_map(f).reduce(f64::min))
            .collect()
    };
    let aggregate = SeedAggregate {
        seeds: seeds.to_vec(),
        branch1_val_mae: Stat::of(&last(Phase::Branch1, |r| r.branch1_val_mae)),
        branch2_val_loss: Stat::of(&last(Phase::Branch2, |r| r.branch2_val_loss)),
    };
    if let Some(dir) = out_dir {
        let mut text = serde_json::to_string_pretty(&aggregate).expect("aggregate serializes");
        text.push('\n');
        write_atomic(&dir.join("aggregate.json"), text.as_bytes())?;
    }
    Ok((runs, aggregate))
}
