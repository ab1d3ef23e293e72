//! Python bindings: signals are plain lists of floats (None = missing),
//! reports come back as dicts.

use cleanctg_core::baselines::{self, ArConfig};
use cleanctg_core::metrics;
use cleanctg_core::noise::InjectionConfig;
use cleanctg_core::pipeline;
use cleanctg_core::screen::{self, ScreenCriteria};
use cleanctg_core::signal::{self, FhrSignal, Sample};
use cleanctg_core::synth::{self, SynthConfig};
use cleanctg_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::PathBuf;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.code());
    if e.is_validation() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

/// Serialises through JSON into native Python objects.
fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses an optional JSON config, filling unspecified fields with defaults.
fn config<T: DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("config: {e}"))),
        None => Ok(T::default()),
    }
}

fn signal_1hz(samples: Vec<Sample>) -> PyResult<FhrSignal> {
    FhrSignal::new("py", 1, samples).map_err(py_err)
}

/// Clean synthetic 1 Hz trace in bpm.
#[pyfunction]
#[pyo3(signature = (minutes=60, seed=0, reactive=true, config_json=None))]
fn synth_trace(minutes: usize, seed: u64, reactive: bool, config_json: Option<&str>) -> PyResult<Vec<f64>> {
    let cfg: SynthConfig = config(config_json)?;
    let s = synth::trace(minutes * 60, reactive, &cfg, seed).map_err(py_err)?;
    Ok(s.samples().iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

/// Injects artefacts into every 10-minute segment of a clean 1 Hz trace.
/// Returns `{"corrupted": [...], "masks": [mask line dicts]}`.
#[pyfunction]
#[pyo3(signature = (samples, seed=0, config_json=None))]
fn inject<'py>(py: Python<'py>, samples: Vec<Sample>, seed: u64, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: InjectionConfig = config(config_json)?;
    let (corrupted, lines) = pipeline::inject_trace(&signal_1hz(samples)?, &cfg.with_seed(seed)).map_err(py_err)?;
    to_py(py, &serde_json::json!({ "corrupted": corrupted, "masks": lines }))
}

/// `(values, missing_mask)` on the normalised scale.
#[pyfunction]
fn normalize(samples: Vec<Sample>) -> (Vec<f64>, Vec<bool>) {
    let n = signal::normalize(&samples);
    (n.values, n.missing_mask)
}

#[pyfunction]
fn denormalize(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(signal::denormalize_value).collect()
}

#[pyfunction]
fn linear_interpolate(x: Vec<f64>, mask: Vec<bool>) -> PyResult<Vec<f64>> {
    baselines::linear_interpolate(&x, &mask).map_err(py_err)
}

/// `(values, fell_back)`.
#[pyfunction]
#[pyo3(signature = (x, mask, order=5))]
fn ar_impute(x: Vec<f64>, mask: Vec<bool>, order: usize) -> PyResult<(Vec<f64>, bool)> {
    let cfg = ArConfig { order, ..ArConfig::default() };
    let r = baselines::ar_impute(&x, &mask, &cfg).map_err(py_err)?;
    Ok((r.values, r.fell_back))
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auroc(&scores, &labels).map_err(py_err)
}

/// `(mse_corrupt, mse_clean)`; `None` where a side has no positions.
#[pyfunction]
fn split_mse(pred: Vec<f64>, target: Vec<f64>, mask: Vec<bool>) -> PyResult<(Option<f64>, Option<f64>)> {
    metrics::split_mse(&pred, &target, &mask).map_err(py_err)
}

/// Normality screen on a 60-minute 1 Hz trace.
#[pyfunction]
#[pyo3(signature = (samples, criteria_json=None))]
fn time_to_decision<'py>(py: Python<'py>, samples: Vec<Sample>, criteria_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let c: ScreenCriteria = config(criteria_json)?;
    let d = screen::time_to_decision(&samples, &c).map_err(py_err)?;
    to_py(py, &d)
}

/// A trained detector/reconstructor checkpoint.
#[pyclass(frozen)]
struct Model {
    inner: pipeline::Model,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: pipeline::Model::load(&path).map_err(py_err)? })
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn has_reconstructor(&self) -> bool {
        self.inner.has_reconstructor()
    }

    /// Per-minute probabilities and gates for every complete 10-minute
    /// segment of a 1 Hz trace.
    fn detect<'py>(&self, py: Python<'py>, samples: Vec<Sample>) -> PyResult<Bound<'py, PyAny>> {
        let s = signal_1hz(samples)?;
        let mut rows = Vec::new();
        for (k, raw) in s.samples().chunks_exact(signal::SEGMENT10_LEN).enumerate() {
            let dets = py.detach(|| self.inner.detect_parent(&signal::normalize(raw))).map_err(py_err)?;
            for (m, d) in dets.iter().enumerate() {
                rows.push(serde_json::json!({
                    "segment": k, "minute": m, "probs": d.result.probs, "gates": d.result.gates,
                }));
            }
        }
        to_py(py, &rows)
    }

    /// Cleaned 1 Hz trace in bpm (None where a missing sample stays missing).
    fn denoise(&self, py: Python<'_>, samples: Vec<Sample>) -> PyResult<Vec<Sample>> {
        let s = signal_1hz(samples)?;
        let out = py.detach(|| self.inner.denoise_trace(&s)).map_err(py_err)?;
        Ok(out.samples)
    }
}

/// Registers the module contents; used by the extension entry point and by
/// embedded tests.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_trace, m)?)?;
    m.add_function(wrap_pyfunction!(inject, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(linear_interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(ar_impute, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(split_mse, m)?)?;
    m.add_function(wrap_pyfunction!(time_to_decision, m)?)?;
    m.add_class::<Model>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[pymodule(name = "cleanctg")]
fn cleanctg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
