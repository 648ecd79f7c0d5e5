use std::time::Instant;

use soc_pinn::data::{generate_synth_dataset, SynthSpec};
use soc_pinn::eval::{multi_horizon_eval, EvalMode, ModelEntry};
use soc_pinn::physics::{HorizonSet, PhysicsMode};
use soc_pinn::train::{train_seeds, TrainConfig};

/// No-PINN vs PINN-All on synthetic cycles, 5 seeds each.
/// Usage: `cargo run --release --example benchmark [epochs]`.
fn main() -> soc_pinn::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(200, |s| s.parse().unwrap());
    let train = generate_synth_dataset(&SynthSpec { id: "train".into(), seed: 1, ..SynthSpec::default() }, 20)?;
    let test = generate_synth_dataset(&SynthSpec { id: "test".into(), seed: 2, ..SynthSpec::default() }, 5)?;
    let horizons = HorizonSet::new(vec![30.0, 60.0, 90.0])?;
    let base = TrainConfig {
        epochs,
        data_horizon_s: Some(30.0),
        physics_horizons: Some(horizons.clone()),
        ..TrainConfig::default()
    };
    let seeds = [0, 1, 2, 3, 4];
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let t0 = Instant::now();
    let (no_pinn, _) = train_seeds(&train, &TrainConfig { physics_mode: PhysicsMode::Off, ..base.clone() }, &seeds, None, threads)?;
    let (pinn, _) = train_seeds(&train, &base, &seeds, None, threads)?;
    eprintln!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    let mut entries = Vec::new();
    for (r, s) in no_pinn.iter().zip(seeds) {
        entries.push(ModelEntry { config: "No-PINN", seed: Some(s), model: &r.model });
    }
    for (r, s) in pinn.iter().zip(seeds) {
        entries.push(ModelEntry { config: "PINN-All", seed: Some(s), model: &r.model });
    }
    let modes = [EvalMode::Branch1Only, EvalMode::TeacherForced, EvalMode::Cascaded];
    let report = multi_horizon_eval(&entries, &test, &horizons, &modes, "bench")?;
    for a in &report.aggregates {
        println!("{:>14} {:>15} {:>4} {:.5} ± {:.5}", a.config, a.mode.as_str(), a.horizon_s, a.mean, a.std);
    }
    Ok(())
}
