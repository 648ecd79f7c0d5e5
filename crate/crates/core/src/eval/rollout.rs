use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::physics_only_predict;
use crate::data::{horizon_steps, Cycle};
use crate::error::{Error, Result};
use crate::model::TwoBranchModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Learned Branch 2 of a physics-informed model.
    Pinn,
    /// Learned Branch 2 of a data-only model.
    NoPinn,
    /// Coulomb counting at every step.
    PhysicsOnly,
}

impl RolloutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pinn => "pinn",
            Self::NoPinn => "no-pinn",
            Self::PhysicsOnly => "physics-only",
        }
    }

    /// Where the trajectory starts when not overridden: Branch 1 for learned
    /// modes, ground truth for Physics-Only.
    pub fn default_start(self) -> RolloutStart {
        match self {
            Self::PhysicsOnly => RolloutStart::GroundTruth,
            _ => RolloutStart::Branch1,
        }
    }
}

impl fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RolloutMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pinn" => Ok(Self::Pinn),
            "no-pinn" | "no_pinn" => Ok(Self::NoPinn),
            "physics-only" | "physics_only" => Ok(Self::PhysicsOnly),
            other => Err(Error::Config(format!(
                "mode must be pinn, no-pinn or physics-only, got `{other}`"
            ))),
        }
    }
}

impl Serialize for RolloutMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RolloutMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Initial SoC of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutStart {
    /// Branch 1 on the first sample's `(V, I, T)`.
    Branch1,
    /// The dataset SoC of the first sample.
    GroundTruth,
    Given(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub cycle_id: String,
    pub mode: RolloutMode,
    pub start: RolloutStart,
    pub horizon_s: f64,
    pub time_s: Vec<f64>,
    /// Predictions clamped to `[0, 1]`.
    pub predicted: Vec<f64>,
    /// Unclamped predictions, as fed to the next step.
    pub raw: Vec<f64>,
    pub truth: Vec<f64>,
    pub abs_error: Vec<f64>,
    /// Absolute error at the last grid point.
    pub final_error: f64,
}

/// Autoregressive prediction over a whole cycle on a grid of `horizon_s`.
///
/// Each step uses the true mean current and temperature of its window. The
/// model is required unless the mode is Physics-Only with a non-Branch-1 start.
pub fn rollout(
    model: Option<&TwoBranchModel>,
    cycle: &Cycle,
    horizon_s: f64,
    mode: RolloutMode,
    start: RolloutStart,
) -> Result<RolloutResult> {
    let k = horizon_steps(horizon_s, cycle.meta.sampling_period_s)?;
    let s = &cycle.samples;
    if s.len() <= k {
        return Err(Error::Config(format!(
            "cycle {} is too short for a {horizon_s} s rollout",
            cycle.id
        )));
    }
    let need_model = mode != RolloutMode::PhysicsOnly || start == RolloutStart::Branch1;
    let model = match (model, need_model) {
        (Some(m), _) => Some(m),
        (None, false) => None,
        (None, true) => {
            return Err(Error::Config(format!("{mode} rollout needs a model checkpoint")))
        }
    };
    let first = s[0];
    let mut soc = match start {
        RolloutStart::Branch1 => model
            .expect("checked above")
            .estimate_soc_now(first.voltage_v, first.current_a, first.temp_c)?,
        RolloutStart::GroundTruth => first.soc,
        RolloutStart::Given(v) => v,
    };
    let steps = (s.len() - 1) / k;
    let mut raw = Vec::with_capacity(steps + 1);
    raw.push(soc);
    for step in 0..steps {
        let window = &s[step * k + 1..=(step + 1) * k];
        let i_avg = window.iter().map(|x| x.current_a).sum::<f64>() / k as f64;
        let t_avg = window.iter().map(|x| x.temp_c).sum::<f64>() / k as f64;
        soc = match mode {
            RolloutMode::PhysicsOnly => physics_only_predict(soc, i_avg, horizon_s, cycle.meta.c_rated_ah)?,
            _ => model.expect("checked above").predict_soc_future(soc, i_avg, t_avg, horizon_s)?,
        };
        raw.push(soc);
    }
    let time_s: Vec<f64> = (0..=steps).map(|j| s[j * k].time_s).collect();
    let truth: Vec<f64> = (0..=steps).map(|j| s[j * k].soc).collect();
    let predicted: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let abs_error: Vec<f64> = predicted.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
    let final_error = *abs_error.last().expect("at least one point");
    Ok(RolloutResult {
        cycle_id: cycle.id.clone(),
        mode,
        start,
        horizon_s,
        time_s,
        predicted,
        raw,
        truth,
        abs_error,
        final_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synth_cycle, CurrentProfile, NoiseSpec, Segment, SynthSpec};
    use crate::model::{FeatureRange, NormStats};
    use crate::physics::coulomb_count;

    fn quiet(profile: CurrentProfile) -> Cycle {
        generate_synth_cycle(&SynthSpec {
            profile,
            noise: NoiseSpec::default(),
            initial_soc: 1.0,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn physics_only_constant_discharge_is_exact() {
        let c = quiet(CurrentProfile::constant(-3.0, 3000.0));
        let r = rollout(None, &c, 50.0, RolloutMode::PhysicsOnly, RolloutStart::GroundTruth).unwrap();
        assert_eq!(r.time_s.len(), 61);
        assert!(r.abs_error.iter().all(|e| *e < 1e-9));
        let single = coulomb_count(1.0, -3.0, 3000.0, 3.0).unwrap();
        assert!((r.raw.last().unwrap() - single).abs() < 1e-9);
        assert!(r.time_s.windows(2).all(|w| w[1] - w[0] == 50.0));
    }

    #[test]
    fn oracle_start_equals_piecewise_mean_integration() {
        let c = quiet(CurrentProfile::Segments {
            segments: vec![
                Segment { duration_s: 35.0, current_a: -6.0 },
                Segment { duration_s: 45.0, current_a: 1.0 },
                Segment { duration_s: 100.0, current_a: -2.0 },
            ],
        });
        let r = rollout(None, &c, 20.0, RolloutMode::PhysicsOnly, RolloutStart::Given(0.95)).unwrap();
        let mut soc = 0.95;
        for (step, w) in c.samples[1..].chunks(2).enumerate() {
            let mean = (w[0].current_a + w[1].current_a) / 2.0;
            soc += mean * 20.0 / (3.0 * 3600.0);
            assert!((r.raw[step + 1] - soc).abs() < 1e-12);
        }
    }

    #[test]
    fn step_zero_is_branch1_error() {
        let c = quiet(CurrentProfile::constant(-1.0, 600.0));
        let norm = NormStats {
            voltage: FeatureRange::new(3.0, 4.2),
            current: FeatureRange::new(-3.0, 1.0),
            temperature: FeatureRange::new(20.0, 30.0),
            horizon: FeatureRange::new(0.0, 60.0),
        };
        let m = TwoBranchModel::build(norm, 3.0, 4).unwrap();
        let r = rollout(Some(&m), &c, 60.0, RolloutMode::Pinn, RolloutStart::Branch1).unwrap();
        let s = c.samples[0];
        let b1 = m.estimate_soc_now(s.voltage_v, s.current_a, s.temp_c).unwrap();
        assert_eq!(r.abs_error[0], (b1.clamp(0.0, 1.0) - s.soc).abs());
        assert_eq!(r.predicted.len(), r.truth.len());
        assert!(rollout(None, &c, 60.0, RolloutMode::Pinn, RolloutStart::Branch1).is_err());
    }
}
