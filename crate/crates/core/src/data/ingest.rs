use std::path::Path;

use serde::{Deserialize, Serialize};

use super::soc::{derive_soc, SocAnchor};
use super::{Cycle, CycleMeta, Sample, Source};
use crate::error::{Error, Result};

/// Header names accepted for each logical column. Matching is
/// case-insensitive and ignores surrounding whitespace; the first alias
/// present in the header wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub time_s: Vec<String>,
    pub voltage_v: Vec<String>,
    pub current_a: Vec<String>,
    pub temp_c: Vec<String>,
    #[serde(default)]
    pub soc: Vec<String>,
    /// Signed cumulative charge throughput in Ah (decreasing on discharge).
    #[serde(default)]
    pub capacity_ah: Vec<String>,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl ColumnMapping {
    pub fn canonical() -> Self {
        Self {
            time_s: names(&["time_s"]),
            voltage_v: names(&["voltage_v"]),
            current_a: names(&["current_a"]),
            temp_c: names(&["temp_c"]),
            soc: names(&["soc"]),
            capacity_ah: names(&["capacity_ah"]),
        }
    }

    /// Sandia battery-archive time series export.
    pub fn sandia() -> Self {
        Self {
            time_s: names(&["Test_Time (s)", "Test_Time(s)"]),
            voltage_v: names(&["Voltage (V)", "Voltage(V)"]),
            current_a: names(&["Current (A)", "Current(A)"]),
            temp_c: names(&[
                "Cell_Temperature (C)",
                "Cell_Temperature(C)",
                "Environment_Temperature (C)",
            ]),
            soc: Vec::new(),
            capacity_ah: Vec::new(),
        }
    }

    /// McMaster LG HG2 export.
    pub fn lg() -> Self {
        Self {
            time_s: names(&["Time [s]", "Time", "Prog Time"]),
            voltage_v: names(&["Voltage [V]", "Voltage"]),
            current_a: names(&["Current [A]", "Current"]),
            temp_c: names(&["Temperature [degC]", "Battery_Temp_degC", "Temperature"]),
            soc: names(&["SOC", "SoC"]),
            capacity_ah: names(&["Capacity [Ah]", "Ah", "Capacity"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    Sandia,
    Lg,
    Generic(ColumnMapping),
}

impl CsvSchema {
    fn mapping(&self) -> ColumnMapping {
        match self {
            CsvSchema::Sandia => ColumnMapping::sandia(),
            CsvSchema::Lg => ColumnMapping::lg(),
            CsvSchema::Generic(m) => m.clone(),
        }
    }

    fn source(&self) -> Source {
        match self {
            CsvSchema::Sandia => Source::Sandia,
            CsvSchema::Lg => Source::Lg,
            CsvSchema::Generic(_) => Source::Generic,
        }
    }
}

/// Everything `parse_cycle_csv` needs beyond the file itself.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: CsvSchema,
    /// Cycle id; defaults to the file stem.
    pub id: Option<String>,
    /// Metadata to start from; `source` and `sampling_period_s` are filled in.
    pub meta: Option<CycleMeta>,
    /// Rated capacity. LG files default to 3 Ah.
    pub c_rated_ah: Option<f64>,
    /// How to anchor Coulomb integration when the file has no SoC column.
    pub anchor: Option<SocAnchor>,
}

impl IngestOptions {
    pub fn new(schema: CsvSchema) -> Self {
        Self {
            schema,
            id: None,
            meta: None,
            c_rated_ah: None,
            anchor: None,
        }
    }
}

const LG_RATED_AH: f64 = 3.0;

struct Columns {
    time: usize,
    voltage: usize,
    current: usize,
    temp: usize,
    soc: Option<usize>,
    capacity: Option<usize>,
}

fn find(header: &csv::StringRecord, aliases: &[String]) -> Option<usize> {
    aliases.iter().find_map(|alias| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(alias.trim()))
    })
}

fn resolve_columns(header: &csv::StringRecord, m: &ColumnMapping, path: &Path) -> Result<Columns> {
    let required = |aliases: &[String], what: &str| {
        find(header, aliases).ok_or_else(|| {
            Error::Schema(format!(
                "{}: no {what} column (looked for {aliases:?})",
                path.display()
            ))
        })
    };
    Ok(Columns {
        time: required(&m.time_s, "time")?,
        voltage: required(&m.voltage_v, "voltage")?,
        current: required(&m.current_a, "current")?,
        temp: required(&m.temp_c, "temperature")?,
        soc: find(header, &m.soc),
        capacity: find(header, &m.capacity_ah),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Line number, `(t, V, I, T)`, optional SoC, optional capacity.
type Row = (u64, [f64; 4], Option<f64>, Option<f64>);

/// Reads one cycle from a CSV file.
///
/// Rows with missing or non-finite numbers are rejected, listing their line
/// numbers; time must strictly increase. When the file carries no SoC column,
/// SoC comes from the capacity column if present, otherwise from Coulomb
/// integration of the current (see [`derive_soc`]).
pub fn parse_cycle_csv(path: &Path, opts: &IngestOptions) -> Result<Cycle> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{}: {other:?}", path.display())),
        })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let cols = resolve_columns(&header, &opts.schema.mapping(), path)?;

    let mut rows: Vec<Row> = Vec::new();
    let mut bad_lines = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Option<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let main = [cols.time, cols.voltage, cols.current, cols.temp].map(get);
        let soc = cols.soc.map(get);
        let cap = cols.capacity.map(get);
        if main.iter().any(Option::is_none) || soc == Some(None) || cap == Some(None) {
            bad_lines.push(line);
            continue;
        }
        rows.push((line, main.map(|v| v.unwrap()), soc.flatten(), cap.flatten()));
    }
    if !bad_lines.is_empty() {
        return Err(Error::Data(format!(
            "{}: non-finite or missing values on line(s) {bad_lines:?}",
            path.display()
        )));
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 data rows, found {}",
            path.display(),
            rows.len()
        )));
    }
    let backwards: Vec<u64> = rows
        .windows(2)
        .filter(|w| w[1].1[0] <= w[0].1[0])
        .map(|w| w[1].0)
        .collect();
    if !backwards.is_empty() {
        return Err(Error::Data(format!(
            "{}: time does not increase on line(s) {backwards:?}",
            path.display()
        )));
    }

    let mut meta = opts.meta.clone().unwrap_or_default();
    if opts.meta.is_none() {
        meta.source = opts.schema.source();
    }
    meta.sampling_period_s = median(rows.windows(2).map(|w| w[1].1[0] - w[0].1[0]).collect());
    let c_rated = opts
        .c_rated_ah
        .or(opts.meta.as_ref().map(|m| m.c_rated_ah))
        .or((opts.schema == CsvSchema::Lg).then_some(LG_RATED_AH));
    let id = opts.id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cycle".into())
    });

    let samples: Vec<Sample> = rows
        .iter()
        .map(|(_, [t, v, i, temp], soc, _)| Sample {
            time_s: *t,
            voltage_v: *v,
            current_a: *i,
            temp_c: *temp,
            soc: soc.unwrap_or(f64::NAN),
        })
        .collect();

    let mut cycle = Cycle { id, samples, meta };
    if cols.soc.is_some() {
        let max = cycle.samples.iter().map(|s| s.soc).fold(f64::MIN, f64::max);
        let scale = if max > 1.5 { 0.01 } else { 1.0 };
        for s in &mut cycle.samples {
            s.soc *= scale;
        }
        super::soc::clip_soc(&mut cycle, 0.02)?;
        if let Some(c) = c_rated {
            cycle.meta.c_rated_ah = c;
        }
    } else {
        let c_rated = c_rated.ok_or_else(|| {
            Error::Config(format!(
                "{}: rated capacity is required to derive SoC",
                path.display()
            ))
        })?;
        cycle.meta.c_rated_ah = c_rated;
        if cols.capacity.is_some() {
            let soc0 = match opts.anchor {
                Some(SocAnchor::Initial(s)) => s,
                Some(SocAnchor::StartEmpty) => 0.0,
                _ => 1.0,
            };
            let cap0 = rows[0].3.expect("capacity present");
            for (s, row) in cycle.samples.iter_mut().zip(&rows) {
                s.soc = soc0 + (row.3.expect("capacity present") - cap0) / c_rated;
            }
            super::soc::clip_soc(&mut cycle, 0.02)?;
        } else {
            let anchor = match (&opts.anchor, &opts.schema) {
                (Some(a), _) => *a,
                (None, CsvSchema::Sandia) => SocAnchor::Auto,
                (None, _) => {
                    return Err(Error::Config(format!(
                        "{}: no SoC or capacity column; an explicit initial SoC anchor is required",
                        path.display()
                    )))
                }
            };
            cycle = derive_soc(&cycle, c_rated, anchor)?;
        }
    }
    cycle.validate()?;
    Ok(cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn generic() -> IngestOptions {
        IngestOptions::new(CsvSchema::Generic(ColumnMapping::canonical()))
    }

    #[test]
    fn three_row_generic_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "small.csv",
            "time_s,voltage_v,current_a,temp_c,soc\n0,4.1,-1,25,0.9\n10,4.0,-1,25,0.89\n20,3.9,-1,25,0.88\n",
        );
        let c = parse_cycle_csv(&p, &generic()).unwrap();
        assert_eq!(c.samples.len(), 3);
        assert_eq!(c.id, "small");
        assert_eq!(c.meta.sampling_period_s, 10.0);
        assert_eq!(c.samples[1].soc, 0.89);
    }

    #[test]
    fn time_reversal_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bad.csv",
            "time_s,voltage_v,current_a,temp_c,soc\n0,4,0,25,1\n10,4,0,25,1\n5,4,0,25,1\n20,4,0,25,1\n",
        );
        match parse_cycle_csv(&p, &generic()) {
            Err(Error::Data(msg)) => assert!(msg.contains("[4]"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rows_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "nan.csv",
            "time_s,voltage_v,current_a,temp_c,soc\n0,4,0,25,1\n10,NaN,0,25,1\n20,4,,25,1\n30,4,0,25,1\n",
        );
        match parse_cycle_csv(&p, &generic()) {
            Err(Error::Data(msg)) => assert!(msg.contains("[3, 4]"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "nocur.csv", "time_s,voltage_v,temp_c\n0,4,25\n1,4,25\n");
        assert!(matches!(parse_cycle_csv(&p, &generic()), Err(Error::Schema(_))));
    }

    #[test]
    fn sandia_file_at_two_minute_period() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from(
            "Date_Time,Test_Time (s),Cycle_Index,Current (A),Voltage (V),Cell_Temperature (C)\n",
        );
        for k in 0..6 {
            body.push_str(&format!("x,{},1,-3.0,{},25\n", k * 120, 4.1 - 0.05 * k as f64));
        }
        let p = write(&dir, "sandia.csv", &body);
        let opts = IngestOptions {
            c_rated_ah: Some(3.0),
            ..IngestOptions::new(CsvSchema::Sandia)
        };
        let c = parse_cycle_csv(&p, &opts).unwrap();
        assert_eq!(c.meta.sampling_period_s, 120.0);
        assert_eq!(c.meta.source, Source::Sandia);
        // discharge from full: 600 s at 1C
        assert_eq!(c.samples[0].soc, 1.0);
        assert!((c.samples[5].soc - (1.0 - 600.0 / 3600.0)).abs() < 1e-12);
    }

    #[test]
    fn lg_capacity_column_gives_soc() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("Time [s],Voltage [V],Current [A],Temperature [degC],Capacity [Ah]\n");
        for k in 0..5 {
            let cap = -0.3 * k as f64;
            body.push_str(&format!("{},3.7,-6,25,{cap}\n", k as f64 * 0.1));
        }
        let p = write(&dir, "lg.csv", &body);
        let c = parse_cycle_csv(&p, &IngestOptions::new(CsvSchema::Lg)).unwrap();
        assert_eq!(c.meta.c_rated_ah, 3.0);
        assert!((c.samples[4].soc - 0.6).abs() < 1e-12);
        assert!(c.samples.iter().all(|s| (0.0..=1.0).contains(&s.soc)));
    }

    #[test]
    fn generic_without_soc_needs_anchor() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "raw.csv", "time_s,voltage_v,current_a,temp_c\n0,4,-1,25\n10,4,-1,25\n");
        let mut opts = IngestOptions::new(CsvSchema::Generic(ColumnMapping::canonical()));
        opts.c_rated_ah = Some(3.0);
        assert!(matches!(parse_cycle_csv(&p, &opts), Err(Error::Config(_))));
        opts.anchor = Some(SocAnchor::Initial(0.5));
        let c = parse_cycle_csv(&p, &opts).unwrap();
        assert_eq!(c.samples[0].soc, 0.5);
    }
}
