//! Python bindings for the exrw engine.
//!
//! Build with `maturin develop --features extension-module` or copy the
//! cdylib next to `python/smoke_test.py` as `exrw.so`.

use std::time::Duration;

use exrw_core::corpus::{self, ClusterRecord, Document};
use exrw_core::embedding::{self, EmbeddingProvider, FallbackEmbedder as CoreFallback, RemoteProvider, SentenceVector};
use exrw_core::metrics::{self, RougeScore};
use exrw_core::neural::{load_checkpoint, save_checkpoint};
use exrw_core::pipeline::{self, PreparedCluster};
use exrw_core::policy::{self, ExtractMode, PolicyModels};
use exrw_core::rewrite::{IdentityRewriter, RemoteRewriter, RemoteRewriterConfig, Rewriter};
use exrw_core::{ControlConfig, Error};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Http { .. } | Error::Transport { .. } | Error::EmptyRewrite => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn vector(values: Vec<f64>) -> PyResult<SentenceVector> {
    SentenceVector::new(values).map_err(to_py)
}

fn score(s: RougeScore) -> (f64, f64, f64) {
    (s.precision, s.recall, s.f1)
}

/// Splits text into sentences.
#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    corpus::split_sentences(text)
}

/// Lowercased alphanumeric tokens used by ROUGE.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text)
}

/// SHA-256 hex digest of the normalized text.
#[pyfunction]
fn content_hash(text: &str) -> String {
    corpus::content_hash(text)
}

/// ROUGE-N `(precision, recall, f1)` between two texts.
#[pyfunction]
#[pyo3(signature = (candidate, reference, n=2))]
fn rouge_n(candidate: &str, reference: &str, n: usize) -> PyResult<(f64, f64, f64)> {
    if n == 0 {
        return Err(PyValueError::new_err("n must be positive"));
    }
    Ok(score(metrics::rouge_n(&metrics::tokenize(candidate), &metrics::tokenize(reference), n)))
}

/// ROUGE-L `(precision, recall, f1)` between two texts.
#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> (f64, f64, f64) {
    score(metrics::rouge_l(&metrics::tokenize(candidate), &metrics::tokenize(reference)))
}

#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    embedding::cosine(&vector(u)?, &vector(v)?).map_err(to_py)
}

/// Sentence budget for a cluster of vectors.
#[pyfunction]
#[pyo3(signature = (vectors, k, c, max_tn=20))]
fn num_sentences(vectors: Vec<Vec<f64>>, k: f64, c: f64, max_tn: usize) -> PyResult<usize> {
    let vectors = vectors.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
    policy::num_sentences(&vectors, k, c, max_tn).map_err(to_py)
}

/// Hashed bag-of-words embedder; needs no model files.
#[pyclass(frozen)]
struct FallbackEmbedder {
    inner: CoreFallback,
}

#[pymethods]
impl FallbackEmbedder {
    #[new]
    #[pyo3(signature = (dim=64))]
    fn new(dim: usize) -> PyResult<Self> {
        Ok(FallbackEmbedder {
            inner: CoreFallback::new(dim).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let vectors = self.inner.embed(&texts).map_err(to_py)?;
        Ok(vectors.into_iter().map(|v| v.values().to_vec()).collect())
    }
}

/// Policy models plus control knobs, an embedder and a rewriter.
#[pyclass]
struct Engine {
    models: PolicyModels,
    config: ControlConfig,
    provider: Box<dyn EmbeddingProvider>,
    rewriter: Box<dyn Rewriter>,
}

#[pymethods]
impl Engine {
    /// Fresh models seeded from `seed`, or weights from `checkpoint`. With an
    /// `endpoint`, embedding and rewriting go to the remote service.
    #[new]
    #[pyo3(signature = (dim=64, seed=0, checkpoint=None, endpoint=None, cl1=None, cl2=None, k=None, c=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        dim: usize,
        seed: u64,
        checkpoint: Option<&str>,
        endpoint: Option<&str>,
        cl1: Option<f64>,
        cl2: Option<f64>,
        k: Option<f64>,
        c: Option<f64>,
    ) -> PyResult<Self> {
        let mut config = ControlConfig {
            seed,
            ..ControlConfig::default()
        };
        let models = match checkpoint {
            Some(path) => {
                let ckpt = load_checkpoint(path, dim).map_err(to_py)?;
                config = ControlConfig { seed, ..ckpt.config.clone() };
                PolicyModels::from_checkpoint(&ckpt).map_err(to_py)?
            }
            None => PolicyModels::init(dim, &mut ChaCha8Rng::seed_from_u64(seed)),
        };
        config.cl1 = cl1.unwrap_or(config.cl1);
        config.cl2 = cl2.unwrap_or(config.cl2);
        config.k = k.unwrap_or(config.k);
        config.c = c.unwrap_or(config.c);
        config.validate().map_err(to_py)?;
        let (provider, rewriter): (Box<dyn EmbeddingProvider>, Box<dyn Rewriter>) = match endpoint {
            Some(url) => (
                Box::new(RemoteProvider::new(url, dim, Duration::from_secs(30))),
                Box::new(
                    RemoteRewriter::new(&RemoteRewriterConfig {
                        endpoint: url.to_string(),
                        ..RemoteRewriterConfig::default()
                    })
                    .map_err(to_py)?,
                ),
            ),
            None => (Box::new(CoreFallback::new(dim).map_err(to_py)?), Box::new(IdentityRewriter)),
        };
        Ok(Engine {
            models,
            config,
            provider,
            rewriter,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.models.dim()
    }

    /// Current control knobs as a dict.
    fn control<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("cl1", self.config.cl1)?;
        d.set_item("cl2", self.config.cl2)?;
        d.set_item("k", self.config.k)?;
        d.set_item("c", self.config.c)?;
        d.set_item("lambda", self.config.lambda)?;
        d.set_item("max_tn", self.config.max_tn)?;
        d.set_item("seed", self.config.seed)?;
        Ok(d)
    }

    /// Extracts and rewrites one summary from a list of document texts.
    /// Returns a dict with `text`, `sentences`, `indices`, `probs` and `tn`.
    #[pyo3(signature = (documents, cluster_id="cluster", mode="greedy", seed=None))]
    fn summarize<'py>(
        &self,
        py: Python<'py>,
        documents: Vec<String>,
        cluster_id: &str,
        mode: &str,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = match mode {
            "greedy" => ExtractMode::Greedy,
            "sample" => ExtractMode::Sample,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        let docs = documents
            .into_iter()
            .enumerate()
            .map(|(i, text)| Document {
                doc_id: format!("d{i}"),
                text,
            })
            .collect();
        let record = ClusterRecord::new(cluster_id, docs, None).map_err(to_py)?;
        let cluster = PreparedCluster::prepare(&record, self.provider.as_ref()).map_err(to_py)?;
        let seed = seed.unwrap_or(self.config.seed);
        let summary = pipeline::summarize(&self.models, &self.config, &cluster, mode, seed, self.rewriter.as_ref())
            .map_err(to_py)?;
        let indices = summary.trajectory.indices();
        let d = PyDict::new(py);
        d.set_item("text", &summary.rewrite.text)?;
        d.set_item("sentences", cluster.selected_texts(&indices))?;
        d.set_item("indices", indices)?;
        d.set_item("probs", summary.trajectory.steps.iter().map(|s| s.prob).collect::<Vec<_>>())?;
        d.set_item("tn", summary.trajectory.tn)?;
        Ok(d)
    }

    /// ROUGE and similarity reward of `summary` against `reference`.
    fn score<'py>(&self, py: Python<'py>, summary: &str, reference: &str) -> PyResult<Bound<'py, PyDict>> {
        let r = metrics::summary_reward(summary, reference, self.provider.as_ref()).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("rouge2_f1", r.rouge2_f1)?;
        d.set_item("rougeL_f1", r.rouge_l_f1)?;
        d.set_item("rouge_avg", r.rouge_avg)?;
        d.set_item("sim", r.sim)?;
        d.set_item("total", r.total)?;
        Ok(d)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(path, &self.models.to_checkpoint(&self.config)).map_err(to_py)
    }
}

#[pymodule]
fn exrw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(content_hash, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(num_sentences, m)?)?;
    m.add_class::<FallbackEmbedder>()?;
    m.add_class::<Engine>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
