//! Python bindings: confidence and gating math, metrics, the embedding index,
//! and end-to-end runs over synthetic oracle benchmarks.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cir_core::backends::{Backends, VerifierLogits};
use cir_core::eval::{emit_report, map_at_k, rankings_from_outcomes, recall_at_k, Protocol};
use cir_core::fusion::{confidence_from_logits, fuse_rank_keys, gate as gate_rule, FusionKey};
use cir_core::index::{normalize, read_embeddings, EmbeddingFormat};
use cir_core::synth::{oracle_suite, CorpusSpec, FailureModeConfig, QuerySpec, SynthBenchmark};
use cir_core::{build_index, run_batch, Database, EmbeddingIndex, EmbeddingRecord, Error, FusionMode, PipelineConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::UnknownItem(_) => PyKeyError::new_err(e.to_string()),
        Error::NonFinite { .. } => PyValueError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Verifier confidence `1 / (1 + exp(no - yes))`.
#[pyfunction]
fn confidence(logit_yes: f64, logit_no: f64) -> PyResult<f64> {
    confidence_from_logits(VerifierLogits::new(logit_yes, logit_no)).map_err(py_err)
}

/// Pathways to refine: those with reliability strictly below `tau`.
#[pyfunction]
fn gate(r_t2i: f64, r_i2i: f64, tau: f64) -> Vec<String> {
    gate_rule(r_t2i, r_i2i, tau).into_iter().map(|p| p.as_str().to_string()).collect()
}

/// Orders `(item_id, c_t2i, c_i2i)` triples by fused confidence, then the
/// larger single-path confidence, then `c_t2i`, then id.
#[pyfunction]
fn fuse(candidates: Vec<(String, f64, f64)>) -> Vec<String> {
    let keys: Vec<FusionKey> = candidates
        .into_iter()
        .map(|(item_id, c_t2i, c_i2i)| FusionKey { item_id, c_t2i, c_i2i })
        .collect();
    fuse_rank_keys(&keys)
}

#[pyfunction]
#[pyo3(name = "recall_at_k")]
fn py_recall_at_k(ranking: Vec<String>, ground_truth: BTreeSet<String>, k: usize) -> PyResult<f64> {
    recall_at_k(&ranking, &ground_truth, k).map_err(py_err)
}

#[pyfunction]
#[pyo3(name = "map_at_k")]
fn py_map_at_k(ranking: Vec<String>, ground_truth: BTreeSet<String>, k: usize) -> PyResult<f64> {
    map_at_k(&ranking, &ground_truth, k).map_err(py_err)
}

/// Cosine top-K over L2-normalized vectors.
#[pyclass(name = "Index", frozen)]
struct PyIndex(EmbeddingIndex);

#[pymethods]
impl PyIndex {
    #[new]
    fn new(records: Vec<(String, Vec<f32>)>) -> PyResult<Self> {
        let dim = records.first().map_or(0, |(_, v)| v.len());
        let recs = records.into_iter().map(|(id, v)| EmbeddingRecord::new(id, v));
        build_index(recs, dim).map(PyIndex).map_err(py_err)
    }

    /// Reads JSON Lines or binary embeddings.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (records, dim) = read_embeddings(&path).map_err(py_err)?;
        build_index(records, dim).map(PyIndex).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().to_vec()
    }

    /// The query is normalized first, so any nonzero vector works.
    fn top_k(&self, mut query: Vec<f32>, k: usize) -> PyResult<Vec<(String, f64)>> {
        normalize("<query>", &mut query).map_err(py_err)?;
        let hits = self.0.top_k(&query, k).map_err(py_err)?;
        Ok(hits.into_iter().map(|c| (c.item_id, c.similarity)).collect())
    }
}

#[pyclass(name = "Config", frozen)]
struct PyConfig(PipelineConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (mode = "ADA", top_k = 50, tau = 0.7, max_iterations = 1, lam = None, parallelism = 4, seed = 0))]
    fn new(
        mode: &str,
        top_k: usize,
        tau: f64,
        max_iterations: u32,
        lam: Option<f64>,
        parallelism: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = PipelineConfig {
            fusion_mode: FusionMode::parse(mode, lam).map_err(py_err)?,
            top_k,
            tau,
            max_iterations,
            backend_parallelism: parallelism,
            rng_seed: seed,
            ..PipelineConfig::default()
        };
        cir_core::validate_config(cfg).map(PyConfig).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.0.fusion_mode.name()
    }

    #[getter]
    fn top_k(&self) -> usize {
        self.0.top_k
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }

    #[getter]
    fn max_iterations(&self) -> u32 {
        self.0.max_iterations
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(mode={}, top_k={}, tau={}, max_iterations={})",
            self.0.fusion_mode, self.0.top_k, self.0.tau, self.0.max_iterations
        )
    }
}

/// A generated benchmark with oracle backends over it.
#[pyclass(name = "SynthBenchmark", frozen)]
struct PyBench {
    bench: SynthBenchmark,
    backends: Backends,
    database: Database,
}

#[pymethods]
impl PyBench {
    #[new]
    #[pyo3(signature = (seed = 0, items = 200, queries = 50, failure = "t2i=visual_drop:1,i2i=semantic_drop:1"))]
    fn new(seed: u64, items: usize, queries: usize, failure: &str) -> PyResult<Self> {
        let failure: FailureModeConfig = failure.parse().map_err(py_err)?;
        let corpus = CorpusSpec {
            seed,
            n_items: items,
            ..CorpusSpec::default()
        };
        let qs = QuerySpec {
            seed,
            n_queries: queries,
            ..QuerySpec::default()
        };
        let bench = SynthBenchmark::generate(&corpus, &qs, failure).map_err(py_err)?;
        let backends = oracle_suite(Arc::new(bench.corpus.clone()), failure, seed).map_err(py_err)?;
        let index = build_index(bench.corpus.embeddings().map_err(py_err)?, bench.corpus.universe.dim()).map_err(py_err)?;
        let database = Database::new(index, bench.dataset().manifest).map_err(py_err)?;
        Ok(PyBench {
            bench,
            backends,
            database,
        })
    }

    fn __len__(&self) -> usize {
        self.bench.queries.len()
    }

    /// `(query_id, reference_id, modification_text, ground_truth_ids)` per query.
    fn queries(&self) -> Vec<(String, String, String, Vec<String>)> {
        self.bench
            .queries
            .iter()
            .map(|q| {
                (
                    q.query_id.clone(),
                    q.reference_id.clone(),
                    q.modification_text.clone(),
                    q.ground_truth_ids.iter().cloned().collect(),
                )
            })
            .collect()
    }

    /// Runs every query; returns one trace (JSON string) per query.
    fn run(&self, py: Python<'_>, config: &PyConfig) -> Vec<String> {
        let outcomes = py.detach(|| run_batch(&self.bench.queries, &config.0, &self.backends, &self.database));
        outcomes.iter().map(|o| o.trace.to_json_line(false)).collect()
    }

    /// Runs every query; returns `(metric, value)` pairs.
    fn evaluate(&self, py: Python<'_>, config: &PyConfig) -> PyResult<Vec<(String, f64)>> {
        let outcomes = py.detach(|| run_batch(&self.bench.queries, &config.0, &self.backends, &self.database));
        let report = emit_report(
            &self.bench.queries,
            &rankings_from_outcomes(&outcomes),
            Protocol::Synthetic,
            config.0.fusion_mode.name(),
            None,
        )
        .map_err(py_err)?;
        Ok(report.metrics.into_iter().map(|m| (m.name, m.value)).collect())
    }

    /// Writes dataset, embeddings, oracle manifest and backend profiles.
    #[pyo3(signature = (dir, binary = false))]
    fn write(&self, dir: PathBuf, binary: bool) -> PyResult<PathBuf> {
        let format = if binary { EmbeddingFormat::Binary } else { EmbeddingFormat::JsonLines };
        self.bench.write(&dir, format).map_err(py_err)
    }
}

#[pymodule]
fn cir(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(gate, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(py_recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(py_map_at_k, m)?)?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyBench>()?;
    Ok(())
}
