//! Battery cycling data: ingestion, preprocessing, windowing and synthetic cells.

mod ingest;
mod smooth;
mod soc;
mod split;
mod synth;
mod windows;

pub use ingest::{parse_cycle_csv, ColumnMapping, CsvSchema, IngestOptions};
pub use smooth::{moving_average, Channels};
pub use soc::{derive_soc, SocAnchor};
pub use split::{split_dataset, SplitPolicy};
pub use synth::{
    generate_synth_cycle, generate_synth_dataset, CurrentProfile, NoiseSpec, OcvCurve, RandomProfile, Segment, SynthSpec,
};
pub use windows::{build_example_set, horizon_steps, build_examples, compute_norm_stats, TrainingExample};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::write_atomic;

/// One time-stamped measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_s: f64,
    pub voltage_v: f64,
    /// Signed current, discharge negative.
    pub current_a: f64,
    pub temp_c: f64,
    /// Ground-truth state of charge in `[0, 1]`.
    pub soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sandia,
    Lg,
    Synthetic,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleMeta {
    pub source: Source,
    pub chemistry: Option<String>,
    pub c_rate_charge: Option<f64>,
    /// Signed; `-1.0` for a 1C discharge.
    pub c_rate_discharge: Option<f64>,
    pub ambient_temp_c: Option<f64>,
    pub sampling_period_s: f64,
    pub c_rated_ah: f64,
    /// Load pattern label, e.g. `mixed`, `udds`, `constant`.
    pub profile: Option<String>,
}

impl Default for CycleMeta {
    fn default() -> Self {
        Self {
            source: Source::Generic,
            chemistry: None,
            c_rate_charge: None,
            c_rate_discharge: None,
            ambient_temp_c: None,
            sampling_period_s: 1.0,
            c_rated_ah: 1.0,
            profile: None,
        }
    }
}

/// A time-ordered charge/discharge record.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub id: String,
    pub samples: Vec<Sample>,
    pub meta: CycleMeta,
}

impl Cycle {
    /// Checks the structural invariants: at least two samples, strictly
    /// increasing time, finite values and a positive sampling period.
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::Data(format!(
                "cycle {} has {} samples, need at least 2",
                self.id,
                self.samples.len()
            )));
        }
        if !(self.meta.sampling_period_s > 0.0) {
            return Err(Error::Data(format!(
                "cycle {} has non-positive sampling period",
                self.id
            )));
        }
        let bad_time: Vec<usize> = self
            .samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].time_s <= w[0].time_s)
            .map(|(i, _)| i + 1)
            .collect();
        if !bad_time.is_empty() {
            return Err(Error::Data(format!(
                "cycle {}: time not strictly increasing at sample(s) {bad_time:?}",
                self.id
            )));
        }
        if self.samples.iter().any(|s| {
            ![s.time_s, s.voltage_v, s.current_a, s.temp_c, s.soc]
                .iter()
                .all(|v| v.is_finite())
        }) {
            return Err(Error::Data(format!("cycle {} has non-finite values", self.id)));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.time_s - a.time_s,
            _ => 0.0,
        }
    }
}

/// Column order of the canonical per-cycle CSV.
pub const CANONICAL_HEADER: [&str; 5] = ["time_s", "voltage_v", "current_a", "temp_c", "soc"];

/// Writes `<id>.csv` and `<id>.json` (metadata sidecar) into `dir`.
pub fn write_canonical(cycle: &Cycle, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", cycle.id));
    let meta_path = dir.join(format!("{}.json", cycle.id));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CANONICAL_HEADER)
        .map_err(|e| Error::Data(e.to_string()))?;
    for s in &cycle.samples {
        w.write_record(
            [s.time_s, s.voltage_v, s.current_a, s.temp_c, s.soc].map(|v| v.to_string()),
        )
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&csv_path, &bytes)?;

    let mut meta = serde_json::to_string_pretty(&cycle.meta).expect("meta serializes");
    meta.push('\n');
    write_atomic(&meta_path, meta.as_bytes())?;
    Ok((csv_path, meta_path))
}

/// Reads one canonical cycle given its CSV path; the sidecar must sit next to it.
pub fn read_canonical(csv_path: &Path) -> Result<Cycle> {
    let id = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("bad cycle file name {}", csv_path.display())))?
        .to_string();
    let meta_path = csv_path.with_extension("json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CycleMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        context: meta_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mapping = ColumnMapping::canonical();
    let opts = IngestOptions {
        schema: CsvSchema::Generic(mapping),
        id: Some(id),
        meta: Some(meta.clone()),
        c_rated_ah: Some(meta.c_rated_ah),
        anchor: None,
    };
    let mut cycle = parse_cycle_csv(csv_path, &opts)?;
    cycle.meta = meta;
    Ok(cycle)
}

/// Loads every canonical cycle in `dir`, sorted by id.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<Cycle>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut cycles = paths
        .iter()
        .map(|p| read_canonical(p))
        .collect::<Result<Vec<_>>>()?;
    cycles.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(cycles)
}
