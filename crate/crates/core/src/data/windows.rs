use serde::{Deserialize, Serialize};

use super::Cycle;
use crate::error::{Error, Result};
use crate::model::{FeatureRange, NormStats};
use crate::physics::HorizonSet;

/// One supervised pair for both branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    /// Index of the source cycle within the set it was built from.
    pub group: usize,
    pub voltage_v: f64,
    pub current_a: f64,
    pub temp_c: f64,
    /// SoC(t): Branch 1 target and Branch 2 teacher-forced input.
    pub soc_now: f64,
    /// Mean current over the samples in `(t, t + N]`.
    pub i_avg: f64,
    /// Mean temperature over the samples in `(t, t + N]`.
    pub temp_avg: f64,
    pub horizon_s: f64,
    /// SoC(t + N): Branch 2 target.
    pub soc_future: f64,
}

/// Number of sampling periods spanned by `horizon_s`.
pub fn horizon_steps(horizon_s: f64, period_s: f64) -> Result<usize> {
    if !(horizon_s > 0.0 && horizon_s.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon_s}")));
    }
    let k = horizon_s / period_s;
    let rounded = k.round();
    if rounded < 1.0 || (k - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(Error::Config(format!(
            "horizon {horizon_s} s is not a multiple of the sampling period {period_s} s"
        )));
    }
    Ok(rounded as usize)
}

/// Sliding windows of `horizon_s` with stride one sample.
///
/// A cycle too short for a single window yields an empty list and a warning.
pub fn build_examples(cycle: &Cycle, horizon_s: f64) -> Result<Vec<TrainingExample>> {
    let k = horizon_steps(horizon_s, cycle.meta.sampling_period_s)?;
    let s = &cycle.samples;
    if s.len() <= k {
        log::warn!(
            "cycle {} has {} samples, too short for a {horizon_s} s window",
            cycle.id,
            s.len()
        );
        return Ok(Vec::new());
    }
    let n = s.len() - k;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let window = &s[i + 1..=i + k];
        let i_avg = window.iter().map(|x| x.current_a).sum::<f64>() / k as f64;
        let temp_avg = window.iter().map(|x| x.temp_c).sum::<f64>() / k as f64;
        out.push(TrainingExample {
            group: 0,
            voltage_v: s[i].voltage_v,
            current_a: s[i].current_a,
            temp_c: s[i].temp_c,
            soc_now: s[i].soc,
            i_avg,
            temp_avg,
            horizon_s,
            soc_future: s[i + k].soc,
        });
    }
    Ok(out)
}

/// Examples from every cycle, with `group` set to the cycle's index.
pub fn build_example_set(cycles: &[Cycle], horizon_s: f64) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (g, c) in cycles.iter().enumerate() {
        out.extend(build_examples(c, horizon_s)?.into_iter().map(|mut e| {
            e.group = g;
            e
        }));
    }
    Ok(out)
}

/// Min/max of every input feature over the training cycles. The horizon
/// feature spans `[0, max(horizons)]`.
pub fn compute_norm_stats(train_cycles: &[Cycle], horizons: &HorizonSet) -> Result<NormStats> {
    if train_cycles.iter().all(|c| c.samples.is_empty()) {
        return Err(Error::Config("cannot compute statistics from no training data".into()));
    }
    let range = |f: fn(&super::Sample) -> f64, name: &str| -> Result<FeatureRange> {
        let (lo, hi) = train_cycles
            .iter()
            .flat_map(|c| c.samples.iter().map(f))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi <= lo {
            return Err(Error::Config(format!(
                "feature {name} is constant ({lo}) across the training data"
            )));
        }
        Ok(FeatureRange::new(lo, hi))
    };
    Ok(NormStats {
        voltage: range(|s| s.voltage_v, "voltage")?,
        current: range(|s| s.current_a, "current")?,
        temperature: range(|s| s.temp_c, "temperature")?,
        horizon: FeatureRange::new(0.0, horizons.max()),
    })
}
