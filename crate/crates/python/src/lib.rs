//! Python bindings for the `wordica` toolkit.
//!
//! Matrices cross the boundary as lists of rows; structured results are
//! returned as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use wordica::analysis::{self, Direction};
use wordica::combiner::{combine_query, CombinationQuery};
use wordica::embedding_io;
use wordica::intruder::{self, GenerateOptions, ItemSet, PoolDirection, SourceKind};
use wordica::stability::StabilityReport;
use wordica::{Contrast, EmbeddingMatrix, Error, IcaConfig, IcaModel, Vocabulary};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<ndarray::Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    ndarray::Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// A fitted ICA model.
#[pyclass(name = "Model", module = "pywordica", frozen)]
struct PyModel {
    inner: IcaModel,
}

impl PyModel {
    fn check_component(&self, c: usize) -> PyResult<()> {
        if c >= self.inner.n_components() {
            return Err(PyIndexError::new_err(format!(
                "component {c} out of range (model has {})",
                self.inner.n_components()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyModel {
    /// Whitens and decomposes `vectors` (one row per token).
    #[staticmethod]
    #[pyo3(signature = (tokens, vectors, n_components, seed=0, tolerance=1e-4, max_iter=200, contrast="logcosh", restarts=1))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        tokens: Vec<String>,
        vectors: Vec<Vec<f64>>,
        n_components: usize,
        seed: u64,
        tolerance: f64,
        max_iter: usize,
        contrast: &str,
        restarts: usize,
    ) -> PyResult<Self> {
        let vocab = Vocabulary::new(tokens).map_err(py_err)?;
        let embeddings = EmbeddingMatrix::from_f64(&matrix(vectors)?).map_err(py_err)?;
        let config = IcaConfig::new(n_components)
            .seed(seed)
            .tolerance(tolerance)
            .max_iter(max_iter)
            .contrast(parse::<Contrast>(contrast)?)
            .restarts(restarts);
        let inner = py
            .detach(|| IcaModel::fit(vocab, &embeddings, &config))
            .map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: embedding_io::load_model(path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, force=false))]
    fn save(&self, path: PathBuf, force: bool) -> PyResult<()> {
        embedding_io::save_model(&self.inner, path, force).map_err(py_err)
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn n_words(&self) -> usize {
        self.inner.vocab.len()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.vocab.tokens().to_vec()
    }

    /// V×C word-component values.
    #[getter]
    fn sources(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.s)
    }

    /// C×C unmixing matrix in whitened space.
    #[getter]
    fn unmixing(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.w)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn sign_flips(&self) -> Option<Vec<i8>> {
        self.inner.sign_flips.clone()
    }

    fn normalize_signs(&self) -> Self {
        PyModel {
            inner: analysis::normalize_signs(&self.inner),
        }
    }

    /// `(token, value)` pairs at one end of a component.
    #[pyo3(signature = (component, direction="positive", k=10))]
    fn top_words(&self, component: usize, direction: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        self.check_component(component)?;
        let direction: Direction = parse(direction)?;
        Ok(
            analysis::top_words(self.inner.s.view(), &self.inner.vocab, component, direction, k)
                .into_iter()
                .map(|w| (w.token, w.value))
                .collect(),
        )
    }

    /// `(ratio, direction)` over the component's dominant words.
    fn one_sidedness(&self, component: usize) -> PyResult<(Option<f64>, Option<String>)> {
        self.check_component(component)?;
        let (ratio, direction) = analysis::one_sidedness(self.inner.s.view(), component);
        Ok((ratio, direction.map(|d| d.to_string())))
    }

    #[pyo3(signature = (component, top_k=50))]
    fn profile(&self, py: Python<'_>, component: usize, top_k: usize) -> PyResult<Py<PyAny>> {
        self.check_component(component)?;
        to_py(py, &analysis::profile(self.inner.s.view(), &self.inner.vocab, component, top_k))
    }

    /// Words ranked by the product of the given components.
    #[pyo3(signature = (components, top_n=15, clamp_negative=false))]
    fn combine(&self, components: Vec<usize>, top_n: usize, clamp_negative: bool) -> PyResult<Vec<(String, f64)>> {
        let q = CombinationQuery::new(components, top_n).clamp_negative(clamp_negative);
        Ok(combine_query(&self.inner, &q)
            .map_err(py_err)?
            .into_iter()
            .map(|w| (w.token, w.score))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_words={}, n_components={}, sign_normalized={})",
            self.inner.vocab.len(),
            self.inner.n_components(),
            self.inner.is_sign_normalized()
        )
    }
}

/// Reads a word2vec text file into `(tokens, vectors)`.
#[pyfunction]
fn load_text_embeddings(path: PathBuf) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let (vocab, m) = embedding_io::load_text_embeddings(path).map_err(py_err)?;
    Ok((vocab.tokens().to_vec(), rows(&m.to_f64())))
}

/// Cross-run component correlation, row order and greedy matching.
#[pyfunction]
fn stability(py: Python<'_>, a: &PyModel, b: &PyModel) -> PyResult<Py<PyAny>> {
    let report = StabilityReport::from_sources(a.inner.s.view(), b.inner.s.view()).map_err(py_err)?;
    to_py(py, &report)
}

/// Builds the word-intrusion item set for a model. Writes it to `out` when
/// given and returns it as a dict.
#[pyfunction]
#[pyo3(signature = (model, seed=0, top_fraction=0.1, out=None))]
fn generate_intruder_items(
    py: Python<'_>,
    model: &PyModel,
    seed: u64,
    top_fraction: f64,
    out: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let m = &model.inner;
    let pool = if m.is_sign_normalized() {
        PoolDirection::Positive
    } else {
        PoolDirection::MatchItem
    };
    let opts = GenerateOptions::new(SourceKind::Ica, seed)
        .top_fraction(top_fraction)
        .pool_direction(pool);
    let set = intruder::generate_items(m.s.view(), &m.vocab, &opts).map_err(py_err)?;
    if let Some(path) = out {
        let json = set.to_json().map_err(py_err)?;
        std::fs::write(&path, json).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    }
    to_py(py, &set)
}

/// Scores a JSONL response log against an item file.
#[pyfunction]
fn score_intruder(py: Python<'_>, items: PathBuf, responses: PathBuf) -> PyResult<Py<PyAny>> {
    let set = ItemSet::load(items).map_err(py_err)?;
    let records = intruder::read_records_jsonl(responses).map_err(py_err)?;
    to_py(py, &intruder::score_responses(&set.items, &records).map_err(py_err)?)
}

#[pyfunction]
fn baseline_expected_agreement(n_items: usize, n_annotators: usize) -> f64 {
    intruder::baseline_expected_agreement(n_items, n_annotators)
}

#[pymodule]
fn pywordica(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_text_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(generate_intruder_items, m)?)?;
    m.add_function(wrap_pyfunction!(score_intruder, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_expected_agreement, m)?)?;
    Ok(())
}
