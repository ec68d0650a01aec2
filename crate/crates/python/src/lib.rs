//! Python bindings: configuration, the pipeline stages, in-memory
//! recommendation, and a few of the numeric building blocks.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;

use pathrec_core::config::Config as CoreConfig;
use pathrec_core::pipeline::{self, Artifacts};
use pathrec_core::synth::{generate, PlantedConfig};

create_exception!(pathrec, PathrecError, PyException);

fn err(e: pathrec_core::Error) -> PyErr {
    PathrecError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PathrecError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(xs) => {
            let list = PyList::empty(py);
            for x in xs {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Pipeline configuration. Loaded from a `key = value` file, or the defaults
/// when no path is given; `overrides` are `"key=value"` strings.
#[pyclass(name = "Config", module = "pathrec", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let mut inner = match path {
            Some(p) => CoreConfig::load(&p).map_err(err)?,
            None => CoreConfig::from_env(),
        };
        for kv in overrides.unwrap_or_default() {
            inner.apply_override(&kv).map_err(err)?;
        }
        Ok(PyConfig { inner })
    }

    /// Applies one `key=value` override.
    fn set(&mut self, kv: &str) -> PyResult<()> {
        self.inner.apply_override(kv).map_err(err)
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn workdir(&self) -> PathBuf {
        self.inner.workdir.clone()
    }

    #[setter]
    fn set_workdir(&mut self, dir: PathBuf) {
        self.inner.workdir = dir;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(workdir={:?}, hash={})",
            self.inner.workdir,
            &self.inner.hash()[..12]
        )
    }
}

#[pyfunction]
fn build_kg<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let summary = py.detach(|| pipeline::build_kg(&cfg)).map_err(err)?;
    to_py(py, &summary)
}

/// Returns the per-epoch TransE loss.
#[pyfunction]
fn pretrain(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<f64>> {
    let cfg = config.inner.clone();
    py.detach(|| pipeline::pretrain(&cfg)).map_err(err)
}

/// Returns one dict of metrics per epoch.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let history = py
        .detach(|| pipeline::train(&cfg, &mut |_| {}))
        .map_err(err)?;
    to_py(py, &history)
}

/// Returns `{"hr": {k: v}, "ndcg": {k: v}, "n_instances": n}`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let report = py.detach(|| pipeline::evaluate(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Runs every stage; returns `(epoch_metrics, report)`.
#[pyfunction]
fn run<'py>(
    py: Python<'py>,
    config: &PyConfig,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let cfg = config.inner.clone();
    let (history, report) = py
        .detach(|| pipeline::run_all(&cfg, &mut |_| {}))
        .map_err(err)?;
    Ok((to_py(py, &history)?, to_py(py, &report)?))
}

/// Trained artifacts held in memory for repeated queries.
#[pyclass(name = "Recommender", module = "pathrec")]
pub struct PyRecommender {
    cfg: CoreConfig,
    art: Artifacts,
}

#[pymethods]
impl PyRecommender {
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let art = py.detach(|| Artifacts::load(&cfg)).map_err(err)?;
        Ok(PyRecommender { cfg, art })
    }

    /// Top-K items for a session prefix of item keys, as dicts with `item`,
    /// `score`, `origin` and `path`.
    fn recommend<'py>(&self, py: Python<'py>, prefix: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let rows = self.art.recommend_keys(&self.cfg, &prefix).map_err(err)?;
        to_py(py, &rows)
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.art.vocab.len()
    }
}

/// Writes a planted corpus to `out`; returns the three input paths.
#[pyfunction]
#[pyo3(signature = (out, seed=0, toy=false))]
fn gen_planted(out: PathBuf, seed: u64, toy: bool) -> PyResult<(PathBuf, PathBuf, PathBuf)> {
    let base = if toy {
        PlantedConfig::toy()
    } else {
        PlantedConfig::default()
    };
    let corpus = generate(&PlantedConfig { seed, ..base }).map_err(err)?;
    let p = corpus.write(&out).map_err(err)?;
    Ok((p.interactions, p.metadata, p.image_labels))
}

/// Discounted returns `G_t = R_{t+1} + gamma * G_{t+1}`.
#[pyfunction]
fn returns(rewards: Vec<f64>, gamma: f64) -> Vec<f64> {
    pathrec_core::trainer::returns(&rewards, gamma)
}

/// Hit indicator for a 1-based rank (`None` when not ranked).
#[pyfunction]
#[pyo3(signature = (rank, k))]
fn hit_rate(rank: Option<usize>, k: usize) -> f64 {
    pathrec_core::eval::hit_rate(rank, k)
}

#[pyfunction]
#[pyo3(signature = (rank, k))]
fn ndcg(rank: Option<usize>, k: usize) -> f64 {
    pathrec_core::eval::ndcg(rank, k)
}

#[pymodule]
#[pyo3(name = "pathrec")]
pub fn pathrec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PathrecError", m.py().get_type::<PathrecError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRecommender>()?;
    m.add_function(wrap_pyfunction!(build_kg, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gen_planted, m)?)?;
    m.add_function(wrap_pyfunction!(returns, m)?)?;
    m.add_function(wrap_pyfunction!(hit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    Ok(())
}
