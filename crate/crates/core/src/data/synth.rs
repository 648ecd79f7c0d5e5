use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Cycle, CycleMeta, Sample, Source};
use crate::error::{Error, Result};
use crate::physics::SECONDS_PER_HOUR;
use crate::rng::{derive_seed, stream, Stream};

/// Piecewise-linear open-circuit voltage as a function of SoC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcvCurve {
    /// `(soc, volts)` knots with strictly increasing SoC covering `[0, 1]`.
    pub knots: Vec<(f64, f64)>,
}

impl Default for OcvCurve {
    fn default() -> Self {
        Self {
            knots: vec![
                (0.0, 3.0),
                (0.05, 3.3),
                (0.1, 3.45),
                (0.2, 3.55),
                (0.4, 3.66),
                (0.6, 3.8),
                (0.8, 3.97),
                (0.9, 4.07),
                (1.0, 4.2),
            ],
        }
    }
}

impl OcvCurve {
    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        if k.len() < 2 {
            return Err(Error::Config("OCV curve needs at least two knots".into()));
        }
        if k.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(Error::Config("OCV knots must be finite".into()));
        }
        if k.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("OCV knot SoC values must strictly increase".into()));
        }
        if k[0].0 > 0.0 || k[k.len() - 1].0 < 1.0 {
            return Err(Error::Config("OCV knots must cover SoC 0 to 1".into()));
        }
        Ok(())
    }

    pub fn eval(&self, soc: f64) -> f64 {
        let k = &self.knots;
        let j = k.partition_point(|&(s, _)| s <= soc).clamp(1, k.len() - 1);
        let (s0, v0) = k[j - 1];
        let (s1, v1) = k[j];
        v0 + (v1 - v0) * (soc - s0) / (s1 - s0)
    }
}

/// Constant current held for a fixed duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub current_a: f64,
}

/// Random piecewise-constant load. Segment lengths and currents are drawn
/// uniformly; a segment that would push SoC outside `soc_bounds` has its
/// current sign flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomProfile {
    pub duration_s: f64,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
    pub min_current_a: f64,
    pub max_current_a: f64,
    /// Probability that a segment is a rest (zero current).
    pub rest_probability: f64,
    pub soc_bounds: (f64, f64),
}

impl Default for RandomProfile {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            min_segment_s: 5.0,
            max_segment_s: 120.0,
            min_current_a: -6.0,
            max_current_a: 1.5,
            rest_probability: 0.1,
            soc_bounds: (0.02, 0.98),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurrentProfile {
    Segments { segments: Vec<Segment> },
    Random(RandomProfile),
}

impl CurrentProfile {
    pub fn constant(current_a: f64, duration_s: f64) -> Self {
        Self::Segments {
            segments: vec![Segment {
                duration_s,
                current_a,
            }],
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Self::Segments { segments } if segments.len() == 1 => "constant",
            Self::Segments { .. } => "segments",
            Self::Random(_) => "random",
        }
    }
}

/// Gaussian noise standard deviations per measured channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub voltage_v: f64,
    pub current_a: f64,
    pub temp_c: f64,
}

/// Parameters of a first-order equivalent-circuit cell and its load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub id: String,
    pub ocv: OcvCurve,
    pub r0_ohm: f64,
    pub c_rated_ah: f64,
    pub initial_soc: f64,
    pub profile: CurrentProfile,
    pub ambient_temp_c: f64,
    pub noise: NoiseSpec,
    pub sampling_period_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            id: "synth".into(),
            ocv: OcvCurve::default(),
            r0_ohm: 0.05,
            c_rated_ah: 3.0,
            initial_soc: 0.9,
            profile: CurrentProfile::Random(RandomProfile::default()),
            ambient_temp_c: 25.0,
            noise: NoiseSpec {
                voltage_v: 0.002,
                current_a: 0.01,
                temp_c: 0.1,
            },
            sampling_period_s: 10.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.ocv.validate()?;
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {x}")))
            }
        };
        positive(self.c_rated_ah, "capacity")?;
        positive(self.sampling_period_s, "sampling period")?;
        if !(self.r0_ohm >= 0.0 && self.r0_ohm.is_finite()) {
            return Err(Error::Config(format!("r0 must be non-negative, got {}", self.r0_ohm)));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(Error::Config(format!(
                "initial SoC {} outside [0, 1]",
                self.initial_soc
            )));
        }
        if !self.ambient_temp_c.is_finite() {
            return Err(Error::Config("ambient temperature must be finite".into()));
        }
        let n = self.noise;
        for (std, what) in [(n.voltage_v, "voltage"), (n.current_a, "current"), (n.temp_c, "temperature")] {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::Config(format!("{what} noise std must be non-negative, got {std}")));
            }
        }
        match &self.profile {
            CurrentProfile::Segments { segments } => {
                if segments.is_empty() {
                    return Err(Error::Config("current profile has no segments".into()));
                }
                for (k, s) in segments.iter().enumerate() {
                    positive(s.duration_s, &format!("segment {k} duration"))?;
                    if !s.current_a.is_finite() {
                        return Err(Error::Config(format!("segment {k} current is not finite")));
                    }
                }
            }
            CurrentProfile::Random(r) => {
                positive(r.duration_s, "profile duration")?;
                positive(r.min_segment_s, "minimum segment length")?;
                if !(r.max_segment_s >= r.min_segment_s && r.max_segment_s.is_finite()) {
                    return Err(Error::Config("segment length range is empty".into()));
                }
                if !(r.max_current_a >= r.min_current_a
                    && r.min_current_a.is_finite()
                    && r.max_current_a.is_finite())
                {
                    return Err(Error::Config("current range is empty".into()));
                }
                if !(0.0..=1.0).contains(&r.rest_probability) {
                    return Err(Error::Config("rest probability outside [0, 1]".into()));
                }
                let (lo, hi) = r.soc_bounds;
                if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                    return Err(Error::Config("SoC bounds must satisfy 0 <= lo < hi <= 1".into()));
                }
                if !(lo..=hi).contains(&self.initial_soc) {
                    return Err(Error::Config("initial SoC outside the profile's SoC bounds".into()));
                }
            }
        }
        Ok(())
    }

    /// The commanded piecewise-constant current, drawing random profiles
    /// from the spec's seed.
    pub fn segments(&self) -> Result<Vec<Segment>> {
        self.validate()?;
        Ok(match &self.profile {
            CurrentProfile::Segments { segments } => segments.clone(),
            CurrentProfile::Random(r) => random_segments(r, self.initial_soc, self.c_rated_ah, self.seed),
        })
    }
}

fn random_segments(r: &RandomProfile, soc0: f64, c_rated_ah: f64, seed: u64) -> Vec<Segment> {
    let mut rng = stream(seed, Stream::SynthProfile, &[]);
    let scale = 1.0 / (c_rated_ah * SECONDS_PER_HOUR);
    let (lo, hi) = r.soc_bounds;
    let mut soc = soc0;
    let mut elapsed = 0.0;
    let mut out = Vec::new();
    while elapsed < r.duration_s {
        let mut duration_s = rng.random_range(r.min_segment_s..=r.max_segment_s);
        duration_s = duration_s.min(r.duration_s - elapsed);
        let rest = rng.random::<f64>() < r.rest_probability;
        let drawn = rng.random_range(r.min_current_a..=r.max_current_a);
        let mut current_a = if rest { 0.0 } else { drawn };
        let within = |i: f64| (lo..=hi).contains(&(soc + i * duration_s * scale));
        if !within(current_a) {
            current_a = -current_a;
        }
        if !within(current_a) {
            // too long at this rate either way: hold at rest
            current_a = 0.0;
        }
        soc += current_a * duration_s * scale;
        elapsed += duration_s;
        out.push(Segment {
            duration_s,
            current_a,
        });
    }
    out
}

/// Simulates one cycle.
///
/// SoC is the exact integral of the commanded current. Each sample records
/// the current of the segment covering the interval ending at that sample,
/// so window means are exact when segment edges fall on the sampling grid
/// and approximate otherwise. Voltage is `ocv(soc) + i * r0` (discharge
/// current is negative, so the drop lowers the terminal voltage).
pub fn generate_synth_cycle(spec: &SynthSpec) -> Result<Cycle> {
    let segments = spec.segments()?;
    let scale = 1.0 / (spec.c_rated_ah * SECONDS_PER_HOUR);

    // segment start times and SoC at each start
    let mut starts = Vec::with_capacity(segments.len() + 1);
    let mut soc_at = Vec::with_capacity(segments.len() + 1);
    let (mut t, mut soc) = (0.0, spec.initial_soc);
    for (k, s) in segments.iter().enumerate() {
        starts.push(t);
        soc_at.push(soc);
        t += s.duration_s;
        soc += s.current_a * s.duration_s * scale;
        if !(-1e-12..=1.0 + 1e-12).contains(&soc) {
            return Err(Error::Generation(format!(
                "segment {k} ({} A for {} s) drives SoC to {soc:.6}",
                s.current_a, s.duration_s
            )));
        }
    }
    let total = t;

    let n = (total / spec.sampling_period_s + 1e-9).floor() as usize + 1;
    let noise = spec.noise;
    let mut rng = stream(spec.seed, Stream::SynthNoise, &[]);
    let mut draw = |std: f64| {
        if std > 0.0 {
            Normal::new(0.0, std).expect("validated std").sample(&mut rng)
        } else {
            0.0
        }
    };

    let mut samples = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let time_s = j as f64 * spec.sampling_period_s;
        // segment k covers (starts[k], starts[k] + duration]
        while seg + 1 < segments.len() && time_s > starts[seg + 1] {
            seg += 1;
        }
        let s = segments[seg];
        let soc = (soc_at[seg] + s.current_a * (time_s - starts[seg]) * scale).clamp(0.0, 1.0);
        let v = spec.ocv.eval(soc) + s.current_a * spec.r0_ohm + draw(noise.voltage_v);
        let i = s.current_a + draw(noise.current_a);
        let temp = spec.ambient_temp_c + draw(noise.temp_c);
        samples.push(Sample {
            time_s,
            voltage_v: v,
            current_a: i,
            temp_c: temp,
            soc,
        });
    }

    let most_negative = segments.iter().map(|s| s.current_a).fold(0.0, f64::min);
    let most_positive = segments.iter().map(|s| s.current_a).fold(0.0, f64::max);
    let rate = |i: f64| (i != 0.0).then_some(i / spec.c_rated_ah);
    let cycle = Cycle {
        id: spec.id.clone(),
        samples,
        meta: CycleMeta {
            source: Source::Synthetic,
            chemistry: None,
            c_rate_charge: rate(most_positive),
            c_rate_discharge: rate(most_negative),
            ambient_temp_c: Some(spec.ambient_temp_c),
            sampling_period_s: spec.sampling_period_s,
            c_rated_ah: spec.c_rated_ah,
            profile: Some(spec.profile.label().into()),
        },
    };
    cycle.validate()?;
    Ok(cycle)
}

/// `count` cycles from one spec with per-cycle seeds derived from
/// `spec.seed`. Ids are `<spec.id>_<k>` with three-digit `k`.
pub fn generate_synth_dataset(spec: &SynthSpec, count: usize) -> Result<Vec<Cycle>> {
    if count == 0 {
        return Err(Error::Config("cycle count must be at least 1".into()));
    }
    (0..count)
        .map(|k| {
            let cycle_spec = SynthSpec {
                id: format!("{}_{k:03}", spec.id),
                seed: derive_seed(spec.seed, Stream::CycleSeed, &[k as u64]),
                ..spec.clone()
            };
            generate_synth_cycle(&cycle_spec)
        })
        .collect()
}
