//! Python bindings. Matrices cross the boundary as lists of rows and sparse
//! graphs as `(row, col, weight)` triplets; reports and manifests come back as
//! plain dicts.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use lattice_core::cli::{self, RunData, SweepAxis};
use lattice_core::data::{self, InteractionDataset};
use lattice_core::graph;
use lattice_core::{eval, ModelContext, ParameterSet, Partition, SparseGraph};

create_exception!(lattice, LatticeError, PyException);

fn err(e: lattice_core::LatticeError) -> PyErr {
    LatticeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn from_py(value: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = PyModule::import(value.py(), "json")?
        .call_method1("dumps", (value,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn triplets(g: &SparseGraph) -> Vec<(usize, usize, f64)> {
    g.iter().collect()
}

fn from_triplets(num_nodes: usize, entries: Vec<(usize, usize, f64)>) -> PyResult<SparseGraph> {
    let mut rows = vec![Vec::new(); num_nodes];
    for (i, j, w) in entries {
        if i >= num_nodes {
            return Err(PyValueError::new_err(format!("row {} out of range", i)));
        }
        rows[i].push((j, w));
    }
    SparseGraph::from_rows(num_nodes, rows).map_err(err)
}

fn partition(name: &str) -> PyResult<Partition> {
    name.parse().map_err(err)
}

// ---------------------------------------------------------------------------
// configuration and commands

#[pyclass(name = "RunConfig")]
struct PyRunConfig {
    inner: lattice_core::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new(interactions: String, out_dir: String) -> Self {
        PyRunConfig {
            inner: lattice_core::RunConfig::new(interactions, out_dir),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: lattice_core::RunConfig::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, base_dir = PathBuf::from(".")))]
    fn parse(text: &str, base_dir: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: lattice_core::RunConfig::parse(text, base_dir).map_err(err)?,
        })
    }

    /// Sets one key and revalidates.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, from_py(value)?).map_err(err)?;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.canonical())
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(digest={})", self.inner.digest())
    }
}

#[pyfunction]
fn prepare<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let manifest = py.detach(|| cli::cmd_prepare(&cfg)).map_err(err)?;
    to_py(py, &manifest)
}

/// Trains from scratch; returns the per-epoch log and the checkpoint path.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let out = py.detach(|| cli::cmd_train(&cfg, false)).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "best_epoch": out.fit.best_epoch,
            "best_val_recall": out.fit.best_val_recall,
            "history": out.fit.history,
            "checkpoint": out.checkpoint,
            "log": out.log,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (config, checkpoint = None, partition = "test"))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    checkpoint: Option<PathBuf>,
    partition: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let p = self::partition(partition)?;
    let report = py
        .detach(|| cli::cmd_evaluate(&cfg, checkpoint.as_deref(), p))
        .map_err(err)?;
    to_py(py, &report)
}

/// Returns `(table_path, rows)` where each row is `(value, report)`.
#[pyfunction]
#[pyo3(signature = (config, axis, values, out = None))]
fn sweep<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    axis: &str,
    values: Vec<f64>,
    out: Option<PathBuf>,
) -> PyResult<(PathBuf, Bound<'py, PyAny>)> {
    let cfg = config.inner.clone();
    let axis: SweepAxis = axis.parse().map_err(err)?;
    let (path, rows) = py
        .detach(|| cli::cmd_sweep(&cfg, axis, &values, out.as_deref()))
        .map_err(err)?;
    let rows: Vec<_> = rows.iter().map(|r| (r.value, &r.report)).collect();
    Ok((path, to_py(py, &rows)?))
}

// ---------------------------------------------------------------------------
// data

#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: InteractionDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_interactions(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_pairs(num_users: usize, num_items: usize, pairs: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(PyDataset {
            inner: InteractionDataset::from_pairs(num_users, num_items, pairs).map_err(err)?,
        })
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    fn __len__(&self) -> usize {
        self.inner.num_pairs()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs().to_vec()
    }

    fn positives(&self, user: usize) -> PyResult<Vec<usize>> {
        if user >= self.inner.num_users() {
            return Err(PyValueError::new_err(format!("user {} out of range", user)));
        }
        Ok(self.inner.positives(user).to_vec())
    }

    fn user_id(&self, user: usize) -> PyResult<String> {
        let ids = self.inner.user_ids();
        if user >= ids.len() {
            return Err(PyValueError::new_err(format!("user {} out of range", user)));
        }
        Ok(ids.name(user).to_string())
    }

    fn item_id(&self, item: usize) -> PyResult<String> {
        let ids = self.inner.item_ids();
        if item >= ids.len() {
            return Err(PyValueError::new_err(format!("item {} out of range", item)));
        }
        Ok(ids.name(item).to_string())
    }

    fn split_warm(&self, seed: u64) -> PyResult<PySplit> {
        Ok(PySplit {
            inner: data::split_warm(&self.inner, seed).map_err(err)?,
        })
    }

    fn split_cold(&self, item_fraction: f64, seed: u64) -> PyResult<PySplit> {
        Ok(PySplit {
            inner: data::split_cold(&self.inner, item_fraction, seed).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, pairs={})",
            self.inner.num_users(),
            self.inner.num_items(),
            self.inner.num_pairs()
        )
    }
}

#[pyclass(name = "Split")]
struct PySplit {
    inner: lattice_core::Split,
}

#[pymethods]
impl PySplit {
    #[getter]
    fn train(&self) -> Vec<(usize, usize)> {
        self.inner.train.pairs().to_vec()
    }

    #[getter]
    fn valid(&self) -> Vec<(usize, usize)> {
        self.inner.valid.pairs().to_vec()
    }

    #[getter]
    fn test(&self) -> Vec<(usize, usize)> {
        self.inner.test.pairs().to_vec()
    }

    #[getter]
    fn cold_items(&self) -> Vec<usize> {
        self.inner.cold_items.clone()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            lattice_core::SplitMode::Warm => "warm",
            lattice_core::SplitMode::Cold => "cold",
        }
    }
}

/// Reads a feature file as a list of rows, aligned to `dataset` item order.
#[pyfunction]
fn load_features(path: PathBuf, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
    let f = data::load_features(path, &dataset.inner).map_err(err)?;
    Ok(rows(&f.matrix))
}

#[pyfunction]
fn write_features(path: PathBuf, features: Vec<Vec<f64>>) -> PyResult<()> {
    data::write_features(path, &matrix(features)?).map_err(err)
}

// ---------------------------------------------------------------------------
// graphs

/// Unnormalized cosine kNN graph of the feature rows.
#[pyfunction]
fn knn_graph(features: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<(usize, usize, f64)>> {
    let x = matrix(features)?;
    Ok(triplets(&graph::knn_cosine_graph(&x, k).map_err(err)?))
}

#[pyfunction]
fn normalize_sym(num_nodes: usize, entries: Vec<(usize, usize, f64)>) -> PyResult<Vec<(usize, usize, f64)>> {
    Ok(triplets(&graph::normalize_sym(&from_triplets(num_nodes, entries)?)))
}

/// Normalized kNN graph of the raw features.
#[pyfunction]
fn initial_graph(features: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<(usize, usize, f64)>> {
    let x = matrix(features)?;
    Ok(triplets(&graph::build_initial_graph(&x, k).map_err(err)?))
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> Vec<f64> {
    graph::softmax(&logits)
}

// ---------------------------------------------------------------------------
// metrics

/// Items in rank order with `excluded` removed; ties go to the lower index.
#[pyfunction]
#[pyo3(signature = (scores, excluded = Vec::new()))]
fn rank_items(scores: Vec<f64>, mut excluded: Vec<usize>) -> Vec<usize> {
    excluded.sort_unstable();
    excluded.dedup();
    eval::rank_items(&scores, &excluded)
}

#[pyfunction]
fn recall_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    eval::recall_at_k(&ranked, &relevant, k)
}

#[pyfunction]
fn precision_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    eval::precision_at_k(&ranked, &relevant, k)
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    eval::ndcg_at_k(&ranked, &relevant, k)
}

// ---------------------------------------------------------------------------
// in-memory models

/// A model bound to the data of one config, trained in memory or restored
/// from a checkpoint.
#[pyclass(name = "Model")]
struct PyModel {
    cfg: lattice_core::RunConfig,
    data: RunData,
    ctx: ModelContext,
    params: ParameterSet,
    output: lattice_core::ForwardOutput,
}

impl PyModel {
    fn build(cfg: lattice_core::RunConfig, data: RunData, params: ParameterSet) -> lattice_core::Result<Self> {
        let ctx = ModelContext::new(cfg.model.clone(), &data.split.train, data.features.clone())?;
        let output = lattice_core::forward(&ctx, &params)?;
        Ok(PyModel {
            cfg,
            data,
            ctx,
            params,
            output,
        })
    }
}

#[pymethods]
impl PyModel {
    /// Trains without writing any files.
    #[staticmethod]
    fn fit(py: Python<'_>, config: &PyRunConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        py.detach(|| {
            let data = cli::load_run_data(&cfg)?;
            let ctx = ModelContext::new(cfg.model.clone(), &data.split.train, data.features.clone())?;
            let fit = lattice_core::fit(&ctx, &data.split, &cfg.train)?;
            PyModel::build(cfg, data, fit.params)
        })
        .map_err(err)
    }

    #[staticmethod]
    fn load(py: Python<'_>, config: &PyRunConfig, checkpoint: PathBuf) -> PyResult<Self> {
        let cfg = config.inner.clone();
        py.detach(|| {
            let data = cli::load_run_data(&cfg)?;
            let (header, params) = lattice_core::checkpoint::load_checkpoint(&checkpoint)?;
            let model = PyModel::build(cfg, data, params)?;
            header.check_compatible(&model.ctx)?;
            Ok(model)
        })
        .map_err(err)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.ctx.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.ctx.num_items
    }

    /// Current modality weights.
    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.params.mixer.weights()
    }

    fn scores(&self, user: usize) -> PyResult<Vec<f64>> {
        if user >= self.ctx.num_users {
            return Err(PyValueError::new_err(format!("user {} out of range", user)));
        }
        Ok(self.output.score_all(user).to_vec())
    }

    /// Top `k` items for `user`, skipping its training positives.
    fn recommend(&self, user: usize, k: usize) -> PyResult<Vec<usize>> {
        let scores = self.scores(user)?;
        Ok(eval::top_k_items(&scores, self.data.split.train.positives(user), k))
    }

    fn user_embeddings(&self) -> Vec<Vec<f64>> {
        rows(&self.output.user_embeddings)
    }

    fn item_embeddings(&self) -> Vec<Vec<f64>> {
        rows(&self.output.enhanced_items)
    }

    #[pyo3(signature = (partition = "test", cutoffs = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        partition: &str,
        cutoffs: Option<Vec<usize>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cutoffs = cutoffs.unwrap_or_else(|| self.cfg.cutoffs.clone());
        let mut report =
            eval::evaluate_output(&self.output, &self.data.split, self::partition(partition)?, &cutoffs)
                .map_err(err)?;
        report.config_digest = Some(self.cfg.digest());
        to_py(py, &report)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let header = lattice_core::checkpoint::CheckpointHeader::describe(&self.ctx, &self.params, &self.cfg.digest());
        lattice_core::checkpoint::save_checkpoint(path, &header, &self.params).map_err(err)
    }
}

#[pymodule]
fn lattice(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LatticeError", m.py().get_type::<LatticeError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(load_features, m)?)?;
    m.add_function(wrap_pyfunction!(write_features, m)?)?;
    m.add_function(wrap_pyfunction!(knn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_sym, m)?)?;
    m.add_function(wrap_pyfunction!(initial_graph, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(rank_items, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    Ok(())
}
