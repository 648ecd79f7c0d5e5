use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalReport, RolloutResult};
use crate::error::{Error, Result};
use crate::model::write_atomic;

/// Keeps letters, digits, `-`, `_` and `.`; everything else becomes `_`.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Writes `report.json`, `report.csv` and one `plots/mae_<mode>_<config>.dat`
/// per aggregate series. Returns the written paths.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = out_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut written = Vec::new();

    let json = out_dir.join("report.json");
    write_atomic(&json, &json_bytes(report))?;
    written.push(json);

    let mut csv = String::from("config,seed,mode,horizon_s,n_examples,mae,raw,config_hash\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.config,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.mode,
            r.horizon_s,
            r.n_examples,
            r.mae,
            r.raw,
            report.config_hash
        );
    }
    let csv_path = out_dir.join("report.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    written.push(csv_path);

    let mut series: Vec<(&str, super::EvalMode)> = Vec::new();
    for a in &report.aggregates {
        if !series.contains(&(a.config.as_str(), a.mode)) {
            series.push((a.config.as_str(), a.mode));
        }
    }
    for (config, mode) in series {
        let mut dat = format!(
            "# series: {config} ({mode})\n# config_hash: {}\n# horizon_s mae_mean mae_std n_seeds\n",
            report.config_hash
        );
        for a in report.aggregates.iter().filter(|a| a.config == config && a.mode == mode) {
            let _ = writeln!(dat, "{} {} {} {}", a.horizon_s, a.mean, a.std, a.n_seeds);
        }
        let path = plots.join(format!("mae_{}_{}.dat", mode, file_stem(config)));
        write_atomic(&path, dat.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `rollout_<cycle>.csv` (one row per step) and
/// `plots/rollout_<cycle>.dat`.
pub fn emit_rollout(result: &RolloutResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = out_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let stem = file_stem(&result.cycle_id);

    let mut csv = String::from("step,time_s,predicted,raw,truth,abs_error\n");
    let mut dat = format!(
        "# series: {} rollout of {} every {} s\n# time_s predicted truth abs_error\n",
        result.mode, result.cycle_id, result.horizon_s
    );
    for k in 0..result.time_s.len() {
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{}",
            result.time_s[k], result.predicted[k], result.raw[k], result.truth[k], result.abs_error[k]
        );
        let _ = writeln!(
            dat,
            "{} {} {} {}",
            result.time_s[k], result.predicted[k], result.truth[k], result.abs_error[k]
        );
    }
    let csv_path = out_dir.join(format!("rollout_{stem}.csv"));
    write_atomic(&csv_path, csv.as_bytes())?;
    let dat_path = plots.join(format!("rollout_{stem}.dat"));
    write_atomic(&dat_path, dat.as_bytes())?;
    let json_path = out_dir.join(format!("rollout_{stem}.json"));
    write_atomic(&json_path, &json_bytes(result))?;
    Ok(vec![csv_path, dat_path, json_path])
}
