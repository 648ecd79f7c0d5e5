//! Coulomb counting and the label-free physics term of the Branch 2 loss.
//!
//! Currents are signed: discharge negative, charge positive. SoC after a
//! window of constant mean current `I` lasting `N` seconds is
//! `SoC(t) + I * N / (C_rated * 3600)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TwoBranchModel;
use crate::nn::{mae_loss, Gradients};
use crate::rng::Rng;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Physics targets outside this band are resampled.
pub const TARGET_BAND: (f64, f64) = (-0.05, 1.05);

const MAX_RESAMPLE_ATTEMPTS: usize = 10_000;

/// SoC after `horizon_s` seconds at mean current `i_avg`. Not clamped.
pub fn coulomb_count(soc0: f64, i_avg: f64, horizon_s: f64, c_rated_ah: f64) -> Result<f64> {
    if !(c_rated_ah > 0.0 && c_rated_ah.is_finite()) {
        return Err(Error::Config(format!(
            "rated capacity must be positive, got {c_rated_ah}"
        )));
    }
    if horizon_s < 0.0 {
        return Err(Error::Domain(format!("horizon must be non-negative, got {horizon_s}")));
    }
    Ok(soc0 + i_avg * horizon_s / (c_rated_ah * SECONDS_PER_HOUR))
}

/// Ordered set of distinct positive horizons in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HorizonSet(Vec<f64>);

impl HorizonSet {
    pub fn new(mut horizons: Vec<f64>) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::Config("horizon set is empty".into()));
        }
        if horizons.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config(format!(
                "horizons must be positive, got {horizons:?}"
            )));
        }
        horizons.sort_by(f64::total_cmp);
        if horizons.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate horizons in {horizons:?}")));
        }
        Ok(Self(horizons))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("non-empty")
    }

    pub fn contains(&self, h: f64) -> bool {
        self.0.contains(&h)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<f64>> for HorizonSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HorizonSet> for Vec<f64> {
    fn from(h: HorizonSet) -> Self {
        h.0
    }
}

impl FromStr for HorizonSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|p| {
                p.trim()
                    .trim_end_matches('s')
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad horizon `{p}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

/// Which horizons the physics conditions use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhysicsMode {
    /// No physics term (No-PINN).
    Off,
    /// Every condition uses this one horizon (PINN-<h>s).
    Single(f64),
    /// Horizons drawn uniformly from the configured set (PINN-All).
    All,
}

impl fmt::Display for PhysicsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhysicsMode::Off => f.write_str("off"),
            PhysicsMode::Single(h) => write!(f, "single:{h}"),
            PhysicsMode::All => f.write_str("all"),
        }
    }
}

impl FromStr for PhysicsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(Self::Off),
            "all" => Ok(Self::All),
            other => {
                let h = other
                    .strip_prefix("single:")
                    .map(|h| h.trim_end_matches('s'))
                    .and_then(|h| h.parse::<f64>().ok())
                    .filter(|h| *h > 0.0 && h.is_finite())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "physics mode must be off, all or single:<seconds>, got `{s}`"
                        ))
                    })?;
                Ok(Self::Single(h))
            }
        }
    }
}

impl Serialize for PhysicsMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhysicsMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A resolved distribution to draw currents or temperatures from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingPool {
    /// Draw uniformly among the listed values (an empirical distribution).
    Values { values: Vec<f64> },
    /// Draw uniformly from `[min, max]`.
    Uniform { min: f64, max: f64 },
}

impl SamplingPool {
    pub fn validate(&self, what: &str) -> Result<()> {
        match self {
            SamplingPool::Values { values } if values.is_empty() => {
                Err(Error::Config(format!("{what} pool is empty")))
            }
            SamplingPool::Values { values } if values.iter().any(|v| !v.is_finite()) => {
                Err(Error::Config(format!("{what} pool has non-finite values")))
            }
            SamplingPool::Uniform { min, max } if !(min.is_finite() && max.is_finite() && min <= max) => {
                Err(Error::Config(format!("{what} pool range [{min}, {max}] is invalid")))
            }
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match self {
            SamplingPool::Values { values } => values[rng.random_range(0..values.len())],
            SamplingPool::Uniform { min, max } => {
                if min == max {
                    *min
                } else {
                    rng.random_range(*min..=*max)
                }
            }
        }
    }
}

/// One synthetic, label-free input for the physics loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsCondition {
    pub soc0: f64,
    pub i_avg: f64,
    pub temp_c: f64,
    pub horizon_s: f64,
}

/// Sampling inputs shared by every call to [`sample_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSampler {
    pub current_pool: SamplingPool,
    pub temp_pool: SamplingPool,
    pub horizons: HorizonSet,
    pub mode: PhysicsMode,
    pub c_rated_ah: f64,
}

impl ConditionSampler {
    pub fn validate(&self) -> Result<()> {
        self.current_pool.validate("current")?;
        self.temp_pool.validate("temperature")?;
        if !(self.c_rated_ah > 0.0) {
            return Err(Error::Config("rated capacity must be positive".into()));
        }
        match self.mode {
            PhysicsMode::Off => Err(Error::Config("physics mode is off".into())),
            _ => Ok(()),
        }
    }

    fn horizon(&self, rng: &mut Rng) -> f64 {
        match self.mode {
            PhysicsMode::Single(h) => h,
            _ => {
                let hs = self.horizons.as_slice();
                hs[rng.random_range(0..hs.len())]
            }
        }
    }

    /// Draws `n` conditions whose Coulomb-counting targets stay inside
    /// [`TARGET_BAND`].
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Vec<PhysicsCondition>> {
        if n == 0 {
            return Err(Error::Config("need at least one physics condition".into()));
        }
        self.validate()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut attempts = 0;
            loop {
                let soc0 = rng.random_range(0.0..=1.0);
                let i_avg = self.current_pool.draw(rng);
                let temp_c = self.temp_pool.draw(rng);
                let horizon_s = self.horizon(rng);
                let target = coulomb_count(soc0, i_avg, horizon_s, self.c_rated_ah)?;
                if (TARGET_BAND.0..=TARGET_BAND.1).contains(&target) {
                    out.push(PhysicsCondition {
                        soc0,
                        i_avg,
                        temp_c,
                        horizon_s,
                    });
                    break;
                }
                attempts += 1;
                if attempts >= MAX_RESAMPLE_ATTEMPTS {
                    return Err(Error::Config(
                        "current pool cannot produce physical targets at these horizons".into(),
                    ));
                }
            }
        }
        Ok(out)
    }
}

/// Seeded convenience wrapper around [`ConditionSampler::sample`].
pub fn sample_conditions(seed: u64, n: usize, sampler: &ConditionSampler) -> Result<Vec<PhysicsCondition>> {
    let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(seed);
    sampler.sample(&mut rng, n)
}

/// Physics term evaluated on a batch of conditions.
#[derive(Debug, Clone)]
pub struct PhysicsLoss {
    pub loss: f64,
    /// `prediction - target` per condition.
    pub residuals: Vec<f64>,
    /// Gradient of `loss` with respect to Branch 2 only.
    pub branch2_grads: Gradients,
}

/// MAE between Branch 2 predictions and Coulomb-counting targets.
///
/// Branch 1 is never evaluated, so no gradient can reach it.
pub fn physics_loss(model: &TwoBranchModel, conditions: &[PhysicsCondition]) -> Result<PhysicsLoss> {
    if conditions.is_empty() {
        return Err(Error::InvalidInput("physics loss over an empty batch".into()));
    }
    let branch2 = model.branch2();
    let mut preds = Vec::with_capacity(conditions.len());
    let mut targets = Vec::with_capacity(conditions.len());
    let mut caches = Vec::with_capacity(conditions.len());
    for c in conditions {
        let x = model.branch2_input(c.soc0, c.i_avg, c.temp_c, c.horizon_s)?;
        let (y, cache) = branch2.forward(&x)?;
        preds.push(y);
        targets.push(coulomb_count(c.soc0, c.i_avg, c.horizon_s, model.c_rated_ah())?);
        caches.push(cache);
    }
    let (loss, dpred) = mae_loss(&preds, &targets)?;
    let mut grads = Gradients::zeros_like(branch2);
    for (cache, d) in caches.iter().zip(&dpred) {
        if *d != 0.0 {
            let (g, _) = branch2.backward(cache, *d)?;
            grads.add_scaled(&g, 1.0)?;
        }
    }
    let residuals = preds.iter().zip(&targets).map(|(p, t)| p - t).collect();
    Ok(PhysicsLoss {
        loss,
        residuals,
        branch2_grads: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureRange, NormStats};
    use crate::nn::{Activation, DenseLayer, Mlp};
    use proptest::prelude::*;

    fn sampler(mode: PhysicsMode) -> ConditionSampler {
        ConditionSampler {
            current_pool: SamplingPool::Values {
                values: vec![-3.0, -1.5, 1.5],
            },
            temp_pool: SamplingPool::Uniform { min: 15.0, max: 35.0 },
            horizons: HorizonSet::new(vec![120.0, 240.0, 360.0]).unwrap(),
            mode,
            c_rated_ah: 3.0,
        }
    }

    fn norm() -> NormStats {
        NormStats {
            voltage: FeatureRange::new(2.5, 4.2),
            current: FeatureRange::new(-3.0, 3.0),
            temperature: FeatureRange::new(15.0, 35.0),
            horizon: FeatureRange::new(0.0, 360.0),
        }
    }

    /// Branch 2 that outputs its SoC input unchanged: w = [1, 0, 0, 0].
    fn passthrough_model() -> TwoBranchModel {
        let b1 = Mlp::new(&[3, 1], 0).unwrap();
        let b2 = Mlp::from_layers(vec![DenseLayer::from_parts(
            4,
            1,
            Activation::Identity,
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0],
        )
        .unwrap()])
        .unwrap();
        TwoBranchModel::from_branches(b1, b2, norm(), 3.0).unwrap()
    }

    #[test]
    fn coulomb_count_hand_values() {
        assert_eq!(coulomb_count(0.5, 0.0, 999.0, 2.0).unwrap(), 0.5);
        assert_eq!(coulomb_count(1.0, -3.0, 3600.0, 3.0).unwrap(), 0.0);
        assert!((coulomb_count(0.8, -1.5, 720.0, 3.0).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn coulomb_count_errors() {
        assert!(matches!(coulomb_count(0.5, 1.0, 10.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(coulomb_count(0.5, 1.0, -1.0, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sign_convention() {
        let base = 0.5;
        assert!(coulomb_count(base, -0.1, 60.0, 3.0).unwrap() < base);
        assert!(coulomb_count(base, 0.1, 60.0, 3.0).unwrap() > base);
    }

    #[test]
    fn horizon_set_validation_and_parsing() {
        assert!(HorizonSet::new(vec![]).is_err());
        assert!(HorizonSet::new(vec![30.0, 30.0]).is_err());
        assert!(HorizonSet::new(vec![0.0]).is_err());
        let h: HorizonSet = "360, 120,240s".parse().unwrap();
        assert_eq!(h.as_slice(), &[120.0, 240.0, 360.0]);
        assert_eq!(h.max(), 360.0);
    }

    #[test]
    fn physics_mode_parsing() {
        assert_eq!("off".parse::<PhysicsMode>().unwrap(), PhysicsMode::Off);
        assert_eq!("all".parse::<PhysicsMode>().unwrap(), PhysicsMode::All);
        assert_eq!(
            "single:120".parse::<PhysicsMode>().unwrap(),
            PhysicsMode::Single(120.0)
        );
        assert!("single:-1".parse::<PhysicsMode>().is_err());
        assert!("sometimes".parse::<PhysicsMode>().is_err());
        let json = serde_json::to_string(&PhysicsMode::Single(240.0)).unwrap();
        assert_eq!(json, "\"single:240\"");
    }

    #[test]
    fn single_horizon_mode_uses_one_horizon() {
        let c = sample_conditions(1, 500, &sampler(PhysicsMode::Single(120.0))).unwrap();
        assert!(c.iter().all(|c| c.horizon_s == 120.0));
    }

    #[test]
    fn all_mode_mixes_horizons_evenly() {
        let c = sample_conditions(2, 3000, &sampler(PhysicsMode::All)).unwrap();
        for h in [120.0, 240.0, 360.0] {
            let share = c.iter().filter(|c| c.horizon_s == h).count() as f64 / 3000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.03, "share of {h}: {share}");
        }
    }

    #[test]
    fn conditions_are_deterministic_and_physical() {
        let s = sampler(PhysicsMode::All);
        let a = sample_conditions(3, 200, &s).unwrap();
        let b = sample_conditions(3, 200, &s).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!((0.0..=1.0).contains(&c.soc0));
            assert!([-3.0, -1.5, 1.5].contains(&c.i_avg));
            assert!((15.0..=35.0).contains(&c.temp_c));
            let t = coulomb_count(c.soc0, c.i_avg, c.horizon_s, 3.0).unwrap();
            assert!((TARGET_BAND.0..=TARGET_BAND.1).contains(&t));
        }
        assert_ne!(a, sample_conditions(4, 200, &s).unwrap());
    }

    #[test]
    fn empty_pools_rejected() {
        let mut s = sampler(PhysicsMode::All);
        s.current_pool = SamplingPool::Values { values: vec![] };
        assert!(matches!(sample_conditions(0, 10, &s), Err(Error::Config(_))));
        assert!(sample_conditions(0, 10, &sampler(PhysicsMode::Off)).is_err());
    }

    #[test]
    fn exact_fit_contributes_nothing() {
        let m = passthrough_model();
        let zero_current = PhysicsCondition {
            soc0: 0.42,
            i_avg: 0.0,
            temp_c: 20.0,
            horizon_s: 120.0,
        };
        let out = physics_loss(&m, &[zero_current]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.residuals, vec![0.0]);
        assert!(out.branch2_grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_matches_hand_mean() {
        let m = TwoBranchModel::build(norm(), 3.0, 9).unwrap();
        let conds = sample_conditions(5, 16, &sampler(PhysicsMode::All)).unwrap();
        let out = physics_loss(&m, &conds).unwrap();
        let mut sum = 0.0;
        for c in &conds {
            let pred = m.predict_soc_future(c.soc0, c.i_avg, c.temp_c, c.horizon_s).unwrap();
            let target = coulomb_count(c.soc0, c.i_avg, c.horizon_s, 3.0).unwrap();
            sum += (pred - target).abs();
        }
        assert!((out.loss - sum / 16.0).abs() < 1e-15);
        assert_eq!(m.branch1_forward_calls(), 0);
    }

    #[test]
    fn physics_step_leaves_branch1_untouched() {
        use crate::nn::{OptimizerConfig, OptimizerState};
        let mut m = TwoBranchModel::build(norm(), 3.0, 9).unwrap();
        let b1 = m.branch1().parameters();
        let b2 = m.branch2().parameters();
        let conds = sample_conditions(5, 32, &sampler(PhysicsMode::All)).unwrap();
        let out = physics_loss(&m, &conds).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), m.branch2());
        opt.step(m.branch2_mut(), &out.branch2_grads).unwrap();
        assert_eq!(b1, m.branch1().parameters());
        assert_ne!(b2, m.branch2().parameters());
    }

    proptest! {
        #[test]
        fn linear_and_additive(
            soc0 in 0.0f64..1.0,
            i in -10.0f64..10.0,
            n1 in 0.0f64..5000.0,
            n2 in 0.0f64..5000.0,
            c in 0.5f64..10.0,
        ) {
            let d = |i: f64, n: f64| coulomb_count(soc0, i, n, c).unwrap() - soc0;
            let tol = 1e-12;
            prop_assert!((d(2.0 * i, n1) - 2.0 * d(i, n1)).abs() < tol);
            prop_assert!((d(i, 2.0 * n1) - 2.0 * d(i, n1)).abs() < tol);
            let two_step = coulomb_count(coulomb_count(soc0, i, n1, c).unwrap(), i, n2, c).unwrap();
            let one_shot = coulomb_count(soc0, i, n1 + n2, c).unwrap();
            prop_assert!((two_step - one_shot).abs() < tol);
        }

        #[test]
        fn physics_loss_is_nonnegative(seed in 0u64..1000) {
            let m = TwoBranchModel::build(norm(), 3.0, seed).unwrap();
            let conds = sample_conditions(seed, 8, &sampler(PhysicsMode::All)).unwrap();
            prop_assert!(physics_loss(&m, &conds).unwrap().loss >= 0.0);
        }
    }
}
