//! The cascaded two-branch state-of-charge network.
//!
//! Branch 1 maps instantaneous `(V, I, T)` to the present SoC. Branch 2 maps
//! `(SoC(t), mean I, mean T, horizon)` over the window `[t, t + N]` to
//! `SoC(t + N)`. Voltage, current, temperature and horizon are min-max scaled
//! with statistics from the training split; SoC passes through unscaled.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp};
use crate::rng::{derive_seed, Stream};

pub const BRANCH1_DIMS: [usize; 5] = [3, 16, 32, 16, 1];
pub const BRANCH2_DIMS: [usize; 5] = [4, 16, 32, 16, 1];
pub const CHECKPOINT_SCHEMA_VERSION: u64 = 1;

/// Closed interval used for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    #[inline]
    pub fn denormalize(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Config(format!("{name} range is not finite")));
        }
        if self.max <= self.min {
            return Err(Error::Config(format!(
                "{name} range is degenerate (min {} >= max {})",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Per-feature scaling statistics, computed from training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub voltage: FeatureRange,
    pub current: FeatureRange,
    pub temperature: FeatureRange,
    pub horizon: FeatureRange,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        self.voltage.validate("voltage")?;
        self.current.validate("current")?;
        self.temperature.validate("temperature")?;
        self.horizon.validate("horizon")
    }
}

/// Branch 1 and Branch 2 plus the scaling they were trained with.
#[derive(Debug)]
pub struct TwoBranchModel {
    branch1: Mlp,
    branch2: Mlp,
    norm: NormStats,
    c_rated_ah: f64,
    branch1_calls: AtomicU64,
}

impl Clone for TwoBranchModel {
    fn clone(&self) -> Self {
        Self {
            branch1: self.branch1.clone(),
            branch2: self.branch2.clone(),
            norm: self.norm,
            c_rated_ah: self.c_rated_ah,
            branch1_calls: AtomicU64::new(self.branch1_calls.load(Ordering::Relaxed)),
        }
    }
}

impl TwoBranchModel {
    /// Default architecture with freshly initialized branches (`build_model`).
    pub fn build(norm: NormStats, c_rated_ah: f64, seed: u64) -> Result<Self> {
        let branch1 = Mlp::new(&BRANCH1_DIMS, derive_seed(seed, Stream::Branch1Init, &[]))?;
        let branch2 = Mlp::new(&BRANCH2_DIMS, derive_seed(seed, Stream::Branch2Init, &[]))?;
        Self::from_branches(branch1, branch2, norm, c_rated_ah)
    }

    pub fn from_branches(branch1: Mlp, branch2: Mlp, norm: NormStats, c_rated_ah: f64) -> Result<Self> {
        norm.validate()?;
        if !(c_rated_ah > 0.0 && c_rated_ah.is_finite()) {
            return Err(Error::Config(format!(
                "rated capacity must be positive, got {c_rated_ah}"
            )));
        }
        if branch1.input_dim() != 3 {
            return Err(Error::InvalidArchitecture(format!(
                "branch 1 takes (V, I, T), got input width {}",
                branch1.input_dim()
            )));
        }
        if branch2.input_dim() != 4 {
            return Err(Error::InvalidArchitecture(format!(
                "branch 2 takes (SoC, I avg, T avg, horizon), got input width {}",
                branch2.input_dim()
            )));
        }
        Ok(Self {
            branch1,
            branch2,
            norm,
            c_rated_ah,
            branch1_calls: AtomicU64::new(0),
        })
    }

    pub fn branch1(&self) -> &Mlp {
        &self.branch1
    }

    pub fn branch2(&self) -> &Mlp {
        &self.branch2
    }

    pub fn branch1_mut(&mut self) -> &mut Mlp {
        &mut self.branch1
    }

    pub fn branch2_mut(&mut self) -> &mut Mlp {
        &mut self.branch2
    }

    pub fn set_branch2(&mut self, branch2: Mlp) -> Result<()> {
        if branch2.input_dim() != 4 {
            return Err(Error::InvalidArchitecture("branch 2 needs 4 inputs".into()));
        }
        self.branch2 = branch2;
        Ok(())
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn c_rated_ah(&self) -> f64 {
        self.c_rated_ah
    }

    pub fn param_count(&self) -> usize {
        self.branch1.param_count() + self.branch2.param_count()
    }

    /// Number of Branch 1 evaluations made through this model so far.
    pub fn branch1_forward_calls(&self) -> u64 {
        self.branch1_calls.load(Ordering::Relaxed)
    }

    pub(crate) fn note_branch1_call(&self) {
        self.branch1_calls.fetch_add(1, Ordering::Relaxed);
    }

    /// Whether `horizon_s` lies inside the horizon range seen in training.
    pub fn horizon_in_range(&self, horizon_s: f64) -> bool {
        self.norm.horizon.contains(horizon_s)
    }

    pub fn branch1_input(&self, v: f64, i: f64, t: f64) -> Result<[f64; 3]> {
        check_finite(&[v, i, t])?;
        Ok([
            self.norm.voltage.normalize(v),
            self.norm.current.normalize(i),
            self.norm.temperature.normalize(t),
        ])
    }

    pub fn branch2_input(&self, soc_t: f64, i_avg: f64, t_avg: f64, horizon_s: f64) -> Result<[f64; 4]> {
        check_finite(&[soc_t, i_avg, t_avg, horizon_s])?;
        if horizon_s <= 0.0 {
            return Err(Error::Domain(format!(
                "prediction horizon must be positive, got {horizon_s}"
            )));
        }
        Ok([
            soc_t,
            self.norm.current.normalize(i_avg),
            self.norm.temperature.normalize(t_avg),
            self.norm.horizon.normalize(horizon_s),
        ])
    }

    /// Branch 1: present SoC from instantaneous measurements. Not clamped.
    pub fn estimate_soc_now(&self, v: f64, i: f64, t: f64) -> Result<f64> {
        let x = self.branch1_input(v, i, t)?;
        self.note_branch1_call();
        self.branch1.predict(&x)
    }

    /// Branch 2: SoC after `horizon_s` seconds of the given workload. Not clamped.
    pub fn predict_soc_future(&self, soc_t: f64, i_avg: f64, t_avg: f64, horizon_s: f64) -> Result<f64> {
        let x = self.branch2_input(soc_t, i_avg, t_avg, horizon_s)?;
        self.branch2.predict(&x)
    }

    /// Branch 1 followed by Branch 2 seeded with Branch 1's estimate.
    pub fn predict_cascaded(
        &self,
        v: f64,
        i: f64,
        t: f64,
        i_avg: f64,
        t_avg: f64,
        horizon_s: f64,
    ) -> Result<(f64, f64)> {
        let now = self.estimate_soc_now(v, i, t)?;
        let future = self.predict_soc_future(now, i_avg, t_avg, horizon_s)?;
        Ok((now, future))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            c_rated_ah: self.c_rated_ah,
            norm: self.norm,
            branch1: self.branch1.layers().iter().map(LayerRecord::from).collect(),
            branch2: self.branch2.layers().iter().map(LayerRecord::from).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Version {
                found: ckpt.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let branch = |name: &str, layers: Vec<LayerRecord>| -> Result<Mlp> {
            let layers = layers
                .into_iter()
                .enumerate()
                .map(|(i, l)| {
                    l.into_layer().map_err(|e| Error::Parse {
                        context: format!("{name} layer {i}"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Mlp::from_layers(layers)
        };
        let b1 = branch("branch1", ckpt.branch1)?;
        let b2 = branch("branch2", ckpt.branch2)?;
        Self::from_branches(b1, b2, ckpt.norm, ckpt.c_rated_ah)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_checkpoint())
            .expect("checkpoint serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u64,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "checkpoint header".into(),
            message: e.to_string(),
        })?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Version {
                found: header.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "checkpoint".into(),
            message: e.to_string(),
        })?;
        Self::from_checkpoint(ckpt)
    }

    /// Writes the checkpoint atomically (temp file + rename).
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{} ({context})", path.display()),
                message,
            },
            other => other,
        })
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite model input {values:?}")))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// On-disk checkpoint layout. Field order is fixed by declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u64,
    pub c_rated_ah: f64,
    pub norm: NormStats,
    pub branch1: Vec<LayerRecord>,
    pub branch2: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub activation: Activation,
    /// One row per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl From<&DenseLayer> for LayerRecord {
    fn from(l: &DenseLayer) -> Self {
        Self {
            activation: l.activation(),
            weights: l.weights().chunks(l.in_dim()).map(<[f64]>::to_vec).collect(),
            bias: l.bias().to_vec(),
        }
    }
}

impl LayerRecord {
    fn into_layer(self) -> Result<DenseLayer> {
        let out_dim = self.weights.len();
        let in_dim = self.weights.first().map_or(0, Vec::len);
        if self.weights.iter().any(|r| r.len() != in_dim) {
            return Err(Error::Shape("ragged weight rows".into()));
        }
        let flat = self.weights.into_iter().flatten().collect();
        DenseLayer::from_parts(in_dim, out_dim, self.activation, flat, self.bias)
    }
}
