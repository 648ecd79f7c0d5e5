use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::Serialize;

use soc_pinn::data::{
    generate_synth_dataset, moving_average, parse_cycle_csv, read_dataset_dir, split_dataset,
    write_canonical, Channels, ColumnMapping, CsvSchema, Cycle, IngestOptions, SocAnchor,
    SplitPolicy, SynthSpec,
};
use soc_pinn::eval::{
    emit_report, emit_rollout, multi_horizon_eval, rollout as run_rollout, EvalMode, ModelEntry,
    RolloutMode,
};
use soc_pinn::model::{BRANCH1_DIMS, BRANCH2_DIMS};
use soc_pinn::nn::{grad_check, Mlp};
use soc_pinn::physics::{HorizonSet, PhysicsMode};
use soc_pinn::rng::{derive_seed, stream, Stream};
use soc_pinn::train::{train_full, train_seeds, TrainConfig};
use soc_pinn::{Error, Result, TwoBranchModel};

use crate::manifest::ManifestBuilder;
use crate::{EvalArgs, Failure, GradcheckArgs, IngestArgs, RolloutArgs, SynthArgs, TrainArgs};

type CmdResult = std::result::Result<(), Failure>;


fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{what} {}", path.display()),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn threads() -> usize {
    std::env::var("SOC_PINN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

enum Side {
    Train,
    Test,
}

fn load_cycles(dataset: &Path, split: &str, side: Side) -> Result<Vec<Cycle>> {
    if !dataset.is_dir() {
        return Err(Error::Data(format!("dataset directory {} not found", dataset.display())));
    }
    let cycles = read_dataset_dir(dataset)?;
    if cycles.is_empty() {
        return Err(Error::Data(format!("no cycles in {}", dataset.display())));
    }
    let policy = match split {
        "all" => return Ok(cycles),
        "sandia" => SplitPolicy::SandiaCRate,
        "lg" => SplitPolicy::LgMixed,
        path => read_json(Path::new(path), "split")?,
    };
    let (train, test) = split_dataset(&cycles, &policy)?;
    Ok(match side {
        Side::Train => train,
        Side::Test => test,
    })
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("synth");
    let mut spec: SynthSpec = match &a.config {
        Some(p) => {
            manifest.input(p)?;
            read_json(p, "synthetic spec")?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()).into());
    }
    let cycles = generate_synth_dataset(&spec, a.count)?;
    for c in &cycles {
        write_canonical(c, &a.out)?;
    }
    manifest.config(&spec);
    manifest.seeds(&[spec.seed]);
    manifest.finish(&a.out)?;
    println!("wrote {} cycle(s) to {}", cycles.len(), a.out.display());
    Ok(())
}

fn parse_anchor(s: &str) -> Result<SocAnchor> {
    Ok(match s {
        "start-full" => SocAnchor::StartFull,
        "start-empty" => SocAnchor::StartEmpty,
        "end-full" => SocAnchor::EndFull,
        "end-empty" => SocAnchor::EndEmpty,
        "auto" => SocAnchor::Auto,
        v => SocAnchor::Initial(v.parse().map_err(|_| Error::Config(format!("bad anchor `{v}`")))?),
    })
}

#[derive(Debug, Serialize)]
struct CycleSummary {
    id: String,
    samples: usize,
    sampling_period_s: f64,
    soc_min: f64,
    soc_max: f64,
}

#[derive(Debug, Serialize)]
struct IngestFailure {
    path: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    cycles: Vec<CycleSummary>,
    total_samples: usize,
    voltage_v: Option<(f64, f64)>,
    current_a: Option<(f64, f64)>,
    temp_c: Option<(f64, f64)>,
    soc: Option<(f64, f64)>,
    failures: Vec<IngestFailure>,
}

fn range(cycles: &[Cycle], f: fn(&soc_pinn::data::Sample) -> f64) -> Option<(f64, f64)> {
    let mut it = cycles.iter().flat_map(|c| c.samples.iter().map(f)).peekable();
    it.peek()?;
    Some(it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

pub fn ingest(a: IngestArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("ingest");
    let schema = match a.schema.as_str() {
        "sandia" => CsvSchema::Sandia,
        "lg" => CsvSchema::Lg,
        _ => CsvSchema::Generic(match &a.mapping {
            Some(p) => {
                manifest.input(p)?;
                read_json::<ColumnMapping>(p, "column mapping")?
            }
            None => ColumnMapping::canonical(),
        }),
    };
    let anchor = a.anchor.as_deref().map(parse_anchor).transpose()?;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for path in &a.paths {
        let opts = IngestOptions {
            schema: schema.clone(),
            id: None,
            meta: None,
            c_rated_ah: a.c_rated,
            anchor,
        };
        let parsed = parse_cycle_csv(path, &opts).and_then(|mut c| {
            if let Some(w) = a.moving_average {
                c = moving_average(&c, w, Channels::ALL)?;
            }
            if a.profile.is_some() {
                c.meta.profile = a.profile.clone();
            }
            c.meta.c_rate_discharge = a.c_rate_discharge.or(c.meta.c_rate_discharge).or_else(|| {
                // nearest half C of the strongest discharge
                let min_i = c.samples.iter().map(|s| s.current_a).fold(0.0, f64::min);
                (min_i < 0.0).then(|| (2.0 * min_i / c.meta.c_rated_ah).round() / 2.0)
            });
            write_canonical(&c, &a.out)?;
            Ok(c)
        });
        match parsed {
            Ok(c) => {
                manifest.input(path)?;
                ok.push(c);
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failures.push(IngestFailure {
                    path: path.display().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    let summary = IngestSummary {
        cycles: ok
            .iter()
            .map(|c| CycleSummary {
                id: c.id.clone(),
                samples: c.samples.len(),
                sampling_period_s: c.meta.sampling_period_s,
                soc_min: c.samples.iter().map(|s| s.soc).fold(f64::INFINITY, f64::min),
                soc_max: c.samples.iter().map(|s| s.soc).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect(),
        total_samples: ok.iter().map(|c| c.samples.len()).sum(),
        voltage_v: range(&ok, |s| s.voltage_v),
        current_a: range(&ok, |s| s.current_a),
        temp_c: range(&ok, |s| s.temp_c),
        soc: range(&ok, |s| s.soc),
        failures,
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    manifest.config(&serde_json::json!({
        "schema": a.schema,
        "anchor": a.anchor,
        "c_rated_ah": a.c_rated,
        "profile": a.profile,
        "c_rate_discharge": a.c_rate_discharge,
        "moving_average_s": a.moving_average,
    }));
    manifest.finish(&a.out)?;
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} of {} file(s) failed to ingest",
            summary.failures.len(),
            a.paths.len()
        ))
        .into())
    }
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("train");
    let mut config = match &a.config {
        Some(p) => {
            manifest.input(p)?;
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(p) = &a.physics {
        config.physics_mode = p.parse::<PhysicsMode>()?;
    }
    if let Some(h) = &a.horizons {
        config.physics_horizons = Some(h.parse::<HorizonSet>()?);
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let cycles = load_cycles(&a.dataset, &a.split, Side::Train)?;
    manifest.input(&a.dataset)?;
    match a.seeds {
        None => {
            let run = train_full(&cycles, &config, &a.out)?;
            manifest.config(&run.config);
            manifest.seeds(&[config.seed]);
            let b1 = run.history.epochs.iter().filter_map(|r| r.branch1_val_mae).reduce(f64::min);
            println!(
                "{}: {} epochs, best branch 1 validation MAE {}",
                run.config.label(),
                run.history.epochs.len(),
                b1.map_or("n/a".into(), |v| format!("{v:.5}"))
            );
        }
        Some(0) => return Err(Error::Config("--seeds must be at least 1".into()).into()),
        Some(n) => {
            let seeds: Vec<u64> = (0..n as u64).map(|k| config.seed + k).collect();
            let (runs, agg) = train_seeds(&cycles, &config, &seeds, Some(&a.out), threads())?;
            manifest.config(&runs[0].config);
            manifest.seeds(&seeds);
            println!("{}", serde_json::to_string_pretty(&agg).expect("aggregate serializes"));
        }
    }
    manifest.finish(&a.out)?;
    Ok(())
}

struct LoadedModel {
    label: String,
    seed: Option<u64>,
    model: TwoBranchModel,
    path: PathBuf,
}

/// Expands one `--checkpoint` argument into its checkpoint files.
fn checkpoint_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let direct = path.join("checkpoint.json");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path().join("checkpoint.json")))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Data(format!("no checkpoint under {}", path.display())));
    }
    Ok(found)
}

fn load_models(args: &[String]) -> Result<Vec<LoadedModel>> {
    let mut out = Vec::new();
    for arg in args {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(arg)),
        };
        for file in checkpoint_files(&path)? {
            let model = TwoBranchModel::load_checkpoint(&file)?;
            let cfg_path = file.with_file_name("config.json");
            let cfg: Option<TrainConfig> = cfg_path.is_file().then(|| read_json(&cfg_path, "config")).transpose()?;
            out.push(LoadedModel {
                label: label
                    .clone()
                    .or_else(|| cfg.as_ref().map(TrainConfig::label))
                    .unwrap_or_else(|| "model".into()),
                seed: cfg.map(|c| c.seed),
                model,
                path: file,
            });
        }
    }
    Ok(out)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("eval");
    let horizons: HorizonSet = a.horizons.parse()?;
    let modes = a
        .modes
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(str::parse::<EvalMode>)
        .collect::<Result<Vec<_>>>()?;
    let models = load_models(&a.checkpoints)?;
    let cycles = load_cycles(&a.dataset, &a.split, Side::Test)?;
    for m in &models {
        manifest.input(&m.path)?;
    }
    manifest.input(&a.dataset)?;
    let entries: Vec<ModelEntry<'_>> = models
        .iter()
        .map(|m| ModelEntry { config: &m.label, seed: m.seed, model: &m.model })
        .collect();
    let dataset_id = a
        .dataset
        .file_name()
        .map_or_else(|| a.dataset.display().to_string(), |n| n.to_string_lossy().into_owned());
    let report = multi_horizon_eval(&entries, &cycles, &horizons, &modes, &dataset_id)?;
    let dir = a.out.join(&a.run_id);
    emit_report(&report, &dir)?;
    for g in &report.aggregates {
        println!(
            "{:<14} {:<15} {:>8} s  MAE {:.5} (std {:.5}, {} seed(s))",
            g.config, g.mode, g.horizon_s, g.mean, g.std, g.n_seeds
        );
    }
    manifest.config(&serde_json::json!({
        "horizons": horizons,
        "modes": modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "split": a.split,
        "checkpoints": a.checkpoints,
        "config_hash": report.config_hash,
    }));
    manifest.seeds(&models.iter().filter_map(|m| m.seed).collect::<Vec<_>>());
    manifest.finish(&dir)?;
    Ok(())
}

pub fn rollout(a: RolloutArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("rollout");
    let mode: RolloutMode = a.mode.parse()?;
    let model = match &a.checkpoint {
        Some(p) => {
            manifest.input(p)?;
            Some(TwoBranchModel::load_checkpoint(p)?)
        }
        None => None,
    };
    let mut cycles = load_cycles(&a.dataset, &a.split, Side::Test)?;
    manifest.input(&a.dataset)?;
    if !a.cycles.is_empty() {
        if let Some(missing) = a.cycles.iter().find(|id| !cycles.iter().any(|c| &c.id == *id)) {
            return Err(Error::Config(format!("no cycle `{missing}` in the dataset")).into());
        }
        cycles.retain(|c| a.cycles.contains(&c.id));
    }
    let dir = a.out.join(&a.run_id);
    let mut finals = Vec::new();
    for c in &cycles {
        let r = run_rollout(model.as_ref(), c, a.horizon, mode, mode.default_start())?;
        emit_rollout(&r, &dir)?;
        println!("{}: {} steps, final SoC error {:.6}", c.id, r.time_s.len() - 1, r.final_error);
        finals.push(r.final_error);
    }
    if !finals.is_empty() {
        println!("mean final SoC error {:.6}", finals.iter().sum::<f64>() / finals.len() as f64);
    }
    manifest.config(&serde_json::json!({
        "mode": mode.as_str(),
        "horizon_s": a.horizon,
        "split": a.split,
        "cycles": cycles.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
    }));
    manifest.finish(&dir)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradcheckResult {
    arch: Vec<usize>,
    trials: usize,
    max_relative_error: f64,
    tolerance: f64,
    pass: bool,
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut manifest = ManifestBuilder::start("gradcheck");
    let archs: Vec<Vec<usize>> = match &a.arch {
        Some(s) => vec![s
            .split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad layer width `{d}`"))))
            .collect::<Result<_>>()?],
        None => vec![BRANCH1_DIMS.to_vec(), BRANCH2_DIMS.to_vec()],
    };
    if a.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()).into());
    }
    let mut results = Vec::new();
    for (ai, arch) in archs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for t in 0..a.trials {
            let idx = [ai as u64, t as u64];
            let net = Mlp::new(arch, derive_seed(a.seed, Stream::GradCheck, &idx))?;
            let mut rng = stream(a.seed, Stream::GradCheck, &[ai as u64, t as u64, 1]);
            let x: Vec<f64> = (0..arch[0]).map(|_| rng.random_range(-1.0..=1.0)).collect();
            worst = worst.max(grad_check(&net, &x, 1e-6)?);
        }
        let pass = worst < a.tolerance;
        println!(
            "arch {:?}: max relative error {worst:.3e} over {} trial(s): {}",
            arch,
            a.trials,
            if pass { "pass" } else { "FAIL" }
        );
        results.push(GradcheckResult {
            arch: arch.clone(),
            trials: a.trials,
            max_relative_error: worst,
            tolerance: a.tolerance,
            pass,
        });
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_json(&a.out.join("gradcheck.json"), &results)?;
    manifest.config(&serde_json::json!({ "seed": a.seed, "trials": a.trials, "tolerance": a.tolerance }));
    manifest.seeds(&[a.seed]);
    manifest.finish(&a.out)?;
    if results.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Failure::Verification("gradient check failed".into()))
    }
}
