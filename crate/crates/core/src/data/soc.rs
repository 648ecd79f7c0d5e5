use serde::{Deserialize, Serialize};

use super::Cycle;
use crate::error::{Error, Result};
use crate::physics::SECONDS_PER_HOUR;

/// Known SoC at one end of a cycle, used to anchor Coulomb integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocAnchor {
    StartFull,
    StartEmpty,
    EndFull,
    EndEmpty,
    Initial(f64),
    /// Full if the first non-zero current discharges, empty if it charges.
    Auto,
}

/// Fills `soc` by trapezoidal integration of the current, anchored per `anchor`.
///
/// Values are clipped to `[0, 1]`; excursions beyond 0.02 are logged.
pub fn derive_soc(cycle: &Cycle, c_rated_ah: f64, anchor: SocAnchor) -> Result<Cycle> {
    if !(c_rated_ah > 0.0 && c_rated_ah.is_finite()) {
        return Err(Error::Config(format!(
            "rated capacity must be positive, got {c_rated_ah}"
        )));
    }
    if cycle.samples.is_empty() {
        return Err(Error::Data(format!("cycle {} is empty", cycle.id)));
    }
    let anchor = match anchor {
        SocAnchor::Auto => {
            let first = cycle
                .samples
                .iter()
                .map(|s| s.current_a)
                .find(|i| i.abs() > 1e-9)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "cycle {}: cannot infer an SoC anchor from an all-rest cycle; give an initial SoC",
                        cycle.id
                    ))
                })?;
            if first < 0.0 {
                SocAnchor::StartFull
            } else {
                SocAnchor::StartEmpty
            }
        }
        a => a,
    };

    let scale = 1.0 / (c_rated_ah * SECONDS_PER_HOUR);
    let mut delta = Vec::with_capacity(cycle.samples.len());
    let mut acc = 0.0;
    delta.push(0.0);
    for w in cycle.samples.windows(2) {
        acc += 0.5 * (w[0].current_a + w[1].current_a) * (w[1].time_s - w[0].time_s) * scale;
        delta.push(acc);
    }
    let total = acc;
    let offset = match anchor {
        SocAnchor::StartFull => 1.0,
        SocAnchor::StartEmpty => 0.0,
        SocAnchor::Initial(s) => s,
        SocAnchor::EndFull => 1.0 - total,
        SocAnchor::EndEmpty => -total,
        SocAnchor::Auto => unreachable!("resolved above"),
    };
    let mut out = cycle.clone();
    for (s, d) in out.samples.iter_mut().zip(&delta) {
        s.soc = offset + d;
    }
    out.meta.c_rated_ah = c_rated_ah;
    clip_soc(&mut out, 0.02)?;
    Ok(out)
}

/// Clips SoC into `[0, 1]`, warning when the excursion exceeds `tolerance`.
pub(crate) fn clip_soc(cycle: &mut Cycle, tolerance: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for s in &mut cycle.samples {
        if !s.soc.is_finite() {
            return Err(Error::Data(format!("cycle {} has non-finite SoC", cycle.id)));
        }
        worst = worst.max(-s.soc).max(s.soc - 1.0);
        s.soc = s.soc.clamp(0.0, 1.0);
    }
    if worst > tolerance {
        log::warn!(
            "cycle {}: SoC left [0, 1] by {worst:.4}; values clipped",
            cycle.id
        );
    }
    Ok(())
}
