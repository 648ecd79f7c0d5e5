//! Python bindings: model inference, Coulomb counting, synthetic data,
//! training, evaluation and rollout. Structured results cross the boundary
//! as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use soc_pinn::data::{generate_synth_dataset, read_dataset_dir, write_canonical, SynthSpec};
use soc_pinn::eval::{self, EvalMode, ModelCost, ModelEntry, RolloutMode};
use soc_pinn::model::{BRANCH1_DIMS, BRANCH2_DIMS};
use soc_pinn::nn::{grad_check as nn_grad_check, Mlp};
use soc_pinn::physics::HorizonSet;
use soc_pinn::train::{train_full, TrainConfig};
use soc_pinn::{Error, TwoBranchModel};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Generation(_) | Error::Data(_) | Error::Cache(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}

/// A trained two-branch network.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    inner: TwoBranchModel,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint written by `train` or `Model.save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TwoBranchModel::load_checkpoint(&path)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&path).map_err(py_err)
    }

    /// Branch 1: SoC from instantaneous voltage, current and temperature.
    fn estimate_soc_now(&self, voltage_v: f64, current_a: f64, temp_c: f64) -> PyResult<f64> {
        self.inner.estimate_soc_now(voltage_v, current_a, temp_c).map_err(py_err)
    }

    /// Branch 2: SoC after `horizon_s` seconds of the given mean load.
    fn predict_soc_future(&self, soc_now: f64, i_avg: f64, temp_avg: f64, horizon_s: f64) -> PyResult<f64> {
        self.inner.predict_soc_future(soc_now, i_avg, temp_avg, horizon_s).map_err(py_err)
    }

    /// Branch 1 feeding Branch 2; returns `(soc_now, soc_future)`.
    #[allow(clippy::too_many_arguments)]
    fn predict_cascaded(
        &self,
        voltage_v: f64,
        current_a: f64,
        temp_c: f64,
        i_avg: f64,
        temp_avg: f64,
        horizon_s: f64,
    ) -> PyResult<(f64, f64)> {
        self.inner
            .predict_cascaded(voltage_v, current_a, temp_c, i_avg, temp_avg, horizon_s)
            .map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn c_rated_ah(&self) -> f64 {
        self.inner.c_rated_ah()
    }

    /// Parameter, storage and arithmetic counts as JSON.
    fn cost(&self) -> String {
        to_json(&ModelCost::of(&self.inner))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Model(params={}, c_rated_ah={})", self.inner.param_count(), self.inner.c_rated_ah())
    }
}

/// SoC after `horizon_s` seconds at mean current `i_avg` (A, discharge negative).
#[pyfunction]
fn coulomb_count(soc0: f64, i_avg: f64, horizon_s: f64, c_rated_ah: f64) -> PyResult<f64> {
    soc_pinn::coulomb_count(soc0, i_avg, horizon_s, c_rated_ah).map_err(py_err)
}

/// Writes `count` synthetic cycles into `out_dir`; returns the CSV paths.
#[pyfunction]
#[pyo3(signature = (out_dir, count = 1, seed = 0, spec_json = None))]
fn generate_synth(out_dir: PathBuf, count: usize, seed: u64, spec_json: Option<&str>) -> PyResult<Vec<PathBuf>> {
    let mut spec: SynthSpec = match spec_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SynthSpec::default(),
    };
    spec.seed = seed;
    spec.validate().map_err(py_err)?;
    let cycles = generate_synth_dataset(&spec, count).map_err(py_err)?;
    cycles
        .iter()
        .map(|c| write_canonical(c, &out_dir).map(|(csv, _)| csv).map_err(py_err))
        .collect()
}

/// Trains on every cycle in `dataset_dir` and writes the run to `out_dir`.
#[pyfunction]
#[pyo3(signature = (dataset_dir, out_dir, config_json = None))]
fn train(dataset_dir: PathBuf, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<PyModel> {
    let config = match config_json {
        Some(text) => TrainConfig::from_json(text).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    config.validate().map_err(py_err)?;
    let cycles = read_dataset_dir(&dataset_dir).map_err(py_err)?;
    let run = train_full(&cycles, &config, &out_dir).map_err(py_err)?;
    Ok(PyModel { inner: run.model })
}

/// Per-horizon MAE of labelled checkpoints plus the Physics-Only baseline.
/// `checkpoints` is a list of `(label, path)`; the report is returned as JSON.
#[pyfunction]
#[pyo3(signature = (checkpoints, dataset_dir, horizons, modes = vec!["cascaded".to_string()]))]
fn evaluate(
    checkpoints: Vec<(String, PathBuf)>,
    dataset_dir: PathBuf,
    horizons: Vec<f64>,
    modes: Vec<String>,
) -> PyResult<String> {
    let models = checkpoints
        .iter()
        .map(|(label, p)| TwoBranchModel::load_checkpoint(p).map(|m| (label.as_str(), m)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let entries: Vec<ModelEntry<'_>> = models
        .iter()
        .map(|(label, m)| ModelEntry { config: label, seed: None, model: m })
        .collect();
    let modes = modes
        .iter()
        .map(|m| m.parse::<EvalMode>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let horizons = HorizonSet::new(horizons).map_err(py_err)?;
    let cycles = read_dataset_dir(&dataset_dir).map_err(py_err)?;
    let id = dataset_dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let report = eval::multi_horizon_eval(&entries, &cycles, &horizons, &modes, &id).map_err(py_err)?;
    Ok(to_json(&report))
}

/// Autoregressive rollout of one cycle; returns the trajectory as JSON.
#[pyfunction]
#[pyo3(signature = (dataset_dir, cycle_id, horizon_s, mode = "pinn", checkpoint = None))]
fn rollout(
    dataset_dir: PathBuf,
    cycle_id: &str,
    horizon_s: f64,
    mode: &str,
    checkpoint: Option<PathBuf>,
) -> PyResult<String> {
    let mode: RolloutMode = mode.parse().map_err(py_err)?;
    let model = checkpoint
        .as_deref()
        .map(TwoBranchModel::load_checkpoint)
        .transpose()
        .map_err(py_err)?;
    let cycles = read_dataset_dir(&dataset_dir).map_err(py_err)?;
    let cycle = cycles
        .iter()
        .find(|c| c.id == cycle_id)
        .ok_or_else(|| PyValueError::new_err(format!("no cycle `{cycle_id}` in {}", dataset_dir.display())))?;
    let r = eval::rollout(model.as_ref(), cycle, horizon_s, mode, mode.default_start()).map_err(py_err)?;
    Ok(to_json(&r))
}

/// Worst relative error between analytic and finite-difference gradients of
/// a freshly initialized network with widths `dims` at input `x`.
#[pyfunction]
#[pyo3(signature = (dims, seed, x, eps = 1e-6))]
fn grad_check(dims: Vec<usize>, seed: u64, x: Vec<f64>, eps: f64) -> PyResult<f64> {
    let net = Mlp::new(&dims, seed).map_err(py_err)?;
    nn_grad_check(&net, &x, eps).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "soc_pinn")]
pub fn soc_pinn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(coulomb_count, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(rollout, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add("BRANCH1_DIMS", BRANCH1_DIMS.to_vec())?;
    m.add("BRANCH2_DIMS", BRANCH2_DIMS.to_vec())?;
    Ok(())
}
