use super::Cycle;
use crate::error::{Error, Result};

/// Which measurement channels a filter applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub voltage: bool,
    pub current: bool,
    pub temperature: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        voltage: true,
        current: true,
        temperature: true,
    };
}

/// Trailing moving average over the samples with `time > t - window_s`.
///
/// Early samples average whatever history is available. Time and SoC are
/// left untouched.
pub fn moving_average(cycle: &Cycle, window_s: f64, channels: Channels) -> Result<Cycle> {
    let period = cycle.meta.sampling_period_s;
    if !(window_s.is_finite() && window_s >= period * (1.0 - 1e-9)) {
        return Err(Error::Config(format!(
            "moving-average window {window_s} s is shorter than the sampling period {period} s"
        )));
    }
    let tol = 1e-9 * window_s.max(1.0);
    let src = &cycle.samples;
    let mut out = cycle.clone();
    let mut start = 0;
    for (k, s) in src.iter().enumerate() {
        while src[start].time_s <= s.time_s - window_s + tol {
            start += 1;
        }
        let window = &src[start..=k];
        let n = window.len() as f64;
        let mean = |f: fn(&super::Sample) -> f64| window.iter().map(f).sum::<f64>() / n;
        let o = &mut out.samples[k];
        if channels.voltage {
            o.voltage_v = mean(|s| s.voltage_v);
        }
        if channels.current {
            o.current_a = mean(|s| s.current_a);
        }
        if channels.temperature {
            o.temp_c = mean(|s| s.temp_c);
        }
    }
    Ok(out)
}
