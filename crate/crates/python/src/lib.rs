//! Python bindings: synthetic and CSV datasets, training, cross-validation,
//! checkpoint loading, prediction and the evaluation metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

use interpnet::checkpoint::Checkpoint;
use interpnet::data::Task;
use interpnet::dataio::{self, DatasetPaths, SynthConfig};
use interpnet::harness::experiment::{run_cv, run_train, TrainPaths};
use interpnet::harness::ExperimentConfig;
use interpnet::metrics::{self, EvalReport};
use interpnet::model::{Model, ModelKind};

fn py_err(e: interpnet::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_task(task: &str) -> PyResult<Task> {
    task.parse().map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n_cases", report.n_cases)?;
    for (name, value) in report.values() {
        d.set_item(name, value)?;
    }
    Ok(d)
}

/// A labelled collection of sparse multivariate series.
#[pyclass(name = "Dataset", module = "pyinterpnet", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: dataio::loader::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic cohort. `preset` is one of planted, null, trend-only,
    /// intensity-only; `overrides` sets generator fields by name.
    #[staticmethod]
    #[pyo3(signature = (n_cases, dims, seed=0, task="classification", preset="planted", effect=0.5, window=None, overrides=None))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_cases: usize,
        dims: usize,
        seed: u64,
        task: &str,
        preset: &str,
        effect: f64,
        window: Option<f64>,
        overrides: Option<Vec<(String, String)>>,
    ) -> PyResult<Self> {
        let mut sc = SynthConfig::new(n_cases, dims, seed);
        sc.task = parse_task(task)?;
        if let Some(w) = window {
            sc.window = w;
        }
        sc = match preset {
            "planted" => sc,
            "null" => sc.null(),
            "trend-only" => sc.trend_only(effect),
            "intensity-only" => sc.intensity_only(effect),
            other => return Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
        };
        for (k, v) in overrides.unwrap_or_default() {
            sc.set(&k, &v).map_err(py_err)?;
        }
        let inner = dataio::generate_synthetic(&sc).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads `observations.csv`, `labels.csv` and `dims.txt` from `dir`.
    #[staticmethod]
    #[pyo3(signature = (dir, task="classification", window=48.0))]
    fn load(dir: PathBuf, task: &str, window: f64) -> PyResult<Self> {
        let (inner, _) =
            dataio::load_from_paths(&DatasetPaths::in_dir(&dir), parse_task(task)?, window).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        dataio::write_dataset(&self.inner, &DatasetPaths::in_dir(&dir)).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.cases.len()
    }

    #[getter]
    fn dim_names(&self) -> Vec<String> {
        self.inner.schema.dim_names.clone()
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.schema.task.to_string()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.cases.iter().map(|c| c.id.clone()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.cases.iter().map(|c| c.label.as_f64()).collect()
    }

    fn num_observations(&self) -> usize {
        self.inner.cases.iter().map(|c| c.num_observations()).sum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} cases, {} dims, {})",
            self.inner.cases.len(),
            self.inner.schema.dim_names.len(),
            self.inner.schema.task
        )
    }
}

/// Experiment settings; keys match the command line `--set` keys.
#[pyclass(name = "Config", module = "pyinterpnet", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: ExperimentConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.set(&k.extract::<String>()?, &v.str()?.to_string())?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)?;
        self.inner.validate().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        self.inner.to_kv()
    }
}

/// A trained model loaded from a checkpoint.
#[pyclass(name = "Model", module = "pyinterpnet")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner: ck.model })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.config.kind.to_string()
    }

    /// Probabilities for classification, log-days for regression.
    fn predict(&self, data: &PyDataset) -> PyResult<Vec<f64>> {
        self.inner.predict(&data.inner.cases).map_err(py_err)
    }

    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let report = self.inner.evaluate(&data.inner.cases, None).map_err(py_err)?;
        report_dict(py, &report)
    }
}

/// Trains `config.model` with early stopping, writing `train_log.csv`,
/// `last.ckpt` and `best.ckpt` under `out`. Returns the best model.
#[pyfunction]
fn train(py: Python<'_>, data: &PyDataset, config: &PyConfig, out: PathBuf) -> PyResult<(PyModel, Py<PyDict>)> {
    let paths = TrainPaths::in_dir(&out);
    let summary = run_train(&data.inner.cases, &config.inner, &paths, None).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("model", &summary.model)?;
    d.set_item("epochs_run", summary.epochs_run)?;
    d.set_item("steps", summary.steps)?;
    d.set_item("best_epoch", summary.best_epoch)?;
    d.set_item("best_validation_loss", summary.best_validation_loss)?;
    d.set_item("stopped_early", summary.stopped_early)?;
    let model = PyModel::load(paths.best)?;
    Ok((model, d.unbind()))
}

/// k-fold cross-validation; returns `{model: {metric: [per-fold values]}}`.
#[pyfunction]
fn cross_validate<'py>(
    py: Python<'py>,
    data: &PyDataset,
    models: Vec<String>,
    config: &PyConfig,
) -> PyResult<Bound<'py, PyDict>> {
    let kinds = models
        .iter()
        .map(|m| m.parse::<ModelKind>())
        .collect::<interpnet::Result<Vec<_>>>()
        .map_err(py_err)?;
    let report = run_cv(&data.inner.cases, &kinds, &config.inner).map_err(py_err)?;
    let out = PyDict::new(py);
    for m in &report.models {
        let per_metric = PyDict::new(py);
        for fold in &m.folds {
            for (name, value) in fold.values() {
                match per_metric.get_item(name)? {
                    Some(list) => {
                        list.call_method1("append", (value,))?;
                    }
                    None => per_metric.set_item(name, vec![value])?,
                }
            }
        }
        out.set_item(&m.model, per_metric)?;
    }
    Ok(out)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    metrics::roc_auc(&scores, &labels)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    metrics::average_precision(&scores, &labels)
}

#[pyfunction]
fn explained_variance(pred: Vec<f64>, target: Vec<f64>) -> f64 {
    metrics::explained_variance(&pred, &target)
}

/// Metrics the command line reports for these predictions and labels.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, task: &str, predictions: Vec<f64>, labels: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let (classification, regression) = match parse_task(task)? {
        Task::Classification => {
            let labels: Vec<u8> = labels.iter().map(|&y| u8::from(y > 0.5)).collect();
            (Some(metrics::evaluate_classification(&predictions, &labels)), None)
        }
        Task::Regression => (None, Some(metrics::evaluate_regression(&predictions, &labels))),
    };
    let report = EvalReport {
        fold: None,
        n_cases: predictions.len(),
        classification,
        regression,
    };
    report_dict(py, &report)
}

#[pymodule]
fn pyinterpnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(explained_variance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
