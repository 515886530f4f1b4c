//! Python bindings for the `mdmanifold` crate.
//!
//! Matrices cross the boundary as lists of lists; identifiers as `str`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mdmanifold::corpus::{build_cooccurrence, random_projection, CooccurrenceMatrix, OccurrenceMatrix, Record, RecordCorpus};
use mdmanifold::distances::{concept_distance, DistanceMatrix};
use mdmanifold::error::ErrorClass;
use mdmanifold::evaluation::{self, ClusterAssignment};
use mdmanifold::hierarchy::{infer_icd9_edges, ConceptHierarchy, ConceptId};
use mdmanifold::pipeline::{self, PipelineConfig, Stage};
use mdmanifold::spectral::Embedding;
use mdmanifold::synth::{self, SynthConfig};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(mdmanifold_py, DataError, PyException);
create_exception!(mdmanifold_py, NumericError, PyException);

fn to_py(e: mdmanifold::Error) -> PyErr {
    match e.class() {
        ErrorClass::Usage => PyValueError::new_err(e.to_string()),
        ErrorClass::Data => DataError::new_err(e.to_string()),
        ErrorClass::Numeric => NumericError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mdmanifold::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn cid(s: &str) -> PyResult<ConceptId> {
    ConceptId::new(s).py()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(values: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = values.len();
    let d = values.first().map_or(0, Vec::len);
    if values.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Ok(DMatrix::from_row_iterator(n, d, values.into_iter().flatten()))
}

/// Concept tree over string codes; `"ROOT"` as a parent means the virtual root.
#[pyclass(name = "Hierarchy", module = "mdmanifold_py", frozen)]
struct PyHierarchy {
    inner: ConceptHierarchy,
}

#[pymethods]
impl PyHierarchy {
    #[staticmethod]
    fn from_edges(edges: Vec<(String, String)>) -> PyResult<Self> {
        let edges = edges
            .iter()
            .map(|(c, p)| Ok((cid(c)?, cid(p)?)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyHierarchy { inner: ConceptHierarchy::from_edges(edges).py()? })
    }

    /// Prefix tree inferred from ICD-9 code lengths.
    #[staticmethod]
    fn from_icd9(codes: Vec<String>) -> PyResult<Self> {
        let codes = codes.iter().map(|c| cid(c)).collect::<PyResult<Vec<_>>>()?;
        Self::from_edges(
            infer_icd9_edges(&codes)
                .py()?
                .into_iter()
                .map(|(c, p)| (c.to_string(), p.to_string()))
                .collect(),
        )
    }

    #[staticmethod]
    fn from_tsv(path: PathBuf) -> PyResult<Self> {
        Ok(PyHierarchy { inner: pipeline::load_hierarchy(&path).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn concepts(&self) -> Vec<String> {
        self.inner.concepts().iter().map(|c| c.to_string()).collect()
    }

    fn parent(&self, concept: &str) -> PyResult<Option<String>> {
        Ok(self.inner.parent(concept).py()?.map(|p| p.to_string()))
    }

    fn ancestors(&self, concept: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.ancestors(concept).py()?.into_iter().map(|c| c.to_string()).collect())
    }

    fn depth(&self, concept: &str) -> PyResult<u32> {
        self.inner.depth(concept).py()
    }

    fn wu_palmer(&self, a: &str, b: &str) -> PyResult<f64> {
        self.inner.wu_palmer_distance(a, b).py()
    }
}

/// Records as `(id, codes)` pairs, with optional frequency, label and cohort.
#[pyclass(name = "Corpus", module = "mdmanifold_py", frozen)]
struct PyCorpus {
    inner: RecordCorpus,
}

#[pymethods]
impl PyCorpus {
    #[new]
    fn new(records: Vec<(String, Vec<String>)>) -> PyResult<Self> {
        let records = records
            .into_iter()
            .map(|(id, codes)| {
                let codes = codes.iter().map(|c| cid(c)).collect::<PyResult<Vec<_>>>()?;
                Record::new(id, codes, 1).py()
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyCorpus { inner: RecordCorpus::new(records) })
    }

    #[staticmethod]
    fn from_jsonl(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus { inner: pipeline::load_records(&path).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    fn records(&self) -> Vec<(String, Vec<String>)> {
        self.inner
            .records
            .iter()
            .map(|r| (r.id.clone(), r.concepts.iter().map(|c| c.to_string()).collect()))
            .collect()
    }

    fn labels(&self) -> Vec<Option<bool>> {
        self.inner.records.iter().map(|r| r.label).collect()
    }

    fn cohorts(&self) -> Vec<Option<String>> {
        self.inner.records.iter().map(|r| r.cohort.clone()).collect()
    }

    fn augment(&self, hierarchy: &PyHierarchy) -> PyResult<PyCorpus> {
        Ok(PyCorpus { inner: self.inner.augment(&hierarchy.inner, Default::default()).py()? })
    }
}

/// Frequency-weighted concept co-occurrence counts over augmented records.
#[pyclass(name = "Cooccurrence", module = "mdmanifold_py", frozen)]
struct PyCooccurrence {
    inner: CooccurrenceMatrix,
}

#[pymethods]
impl PyCooccurrence {
    #[staticmethod]
    fn build(hierarchy: &PyHierarchy, corpus: &PyCorpus) -> PyResult<Self> {
        let augmented = corpus.inner.augment(&hierarchy.inner, Default::default()).py()?;
        let o = OccurrenceMatrix::from_augmented(&augmented).py()?;
        Ok(PyCooccurrence { inner: build_cooccurrence(&o) })
    }

    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary().ids().iter().map(|c| c.to_string()).collect()
    }

    fn get(&self, a: &str, b: &str) -> PyResult<u64> {
        self.inner.get_by_id(a, b).py()
    }

    fn dense(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.to_dense())
    }

    /// `kind` is one of cosine, manhattan, euclidean, ehdn.
    fn concept_distance(&self, kind: &str, a: &str, b: &str) -> PyResult<f64> {
        concept_distance(kind.parse().py()?, &self.inner, a, b).py()
    }

    /// Gaussian random projection rows, one per vocabulary concept.
    fn project(&self, k: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&random_projection(&self.inner, k, seed).py()?.vectors))
    }
}

fn config(settings: Option<BTreeMap<String, String>>) -> PyResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    for (k, v) in settings.unwrap_or_default() {
        cfg.set(&k, &v).py()?;
    }
    Ok(cfg)
}

/// Record distance matrix; `settings` takes pipeline keys such as `cd_kind`, `sd_kind`, `record_view`.
#[pyfunction]
#[pyo3(signature = (hierarchy, corpus, settings=None))]
fn record_distances(
    hierarchy: &PyHierarchy,
    corpus: &PyCorpus,
    settings: Option<BTreeMap<String, String>>,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let cfg = config(settings)?;
    let dm = pipeline::corpus_distances(&cfg, &hierarchy.inner, &corpus.inner).py()?;
    Ok((dm.ids().to_vec(), rows(&dm.to_dmatrix())))
}

/// k-NN graph and spectral embedding of a distance matrix; returns the embedded ids and coordinates.
#[pyfunction]
#[pyo3(signature = (ids, distances, settings=None))]
fn embed(
    ids: Vec<String>,
    distances: Vec<Vec<f64>>,
    settings: Option<BTreeMap<String, String>>,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let cfg = config(settings)?;
    let n = ids.len();
    if distances.len() != n || distances.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("distance matrix must be n x n for n ids"));
    }
    let dm = DistanceMatrix::from_values(ids, distances.into_iter().flatten().collect()).py()?;
    let (_, e) = pipeline::embed_distances(&cfg, &dm).py()?;
    Ok((e.ids.clone(), rows(&e.coords)))
}

fn embedding(ids: Vec<String>, coords: Vec<Vec<f64>>) -> PyResult<Embedding> {
    Embedding::new(ids, matrix(coords)?, None).py()
}

/// Mean silhouette of points under Euclidean distance; `labels` maps id → cluster.
#[pyfunction]
fn silhouette(ids: Vec<String>, coords: Vec<Vec<f64>>, labels: BTreeMap<String, String>) -> PyResult<f64> {
    evaluation::silhouette(&embedding(ids, coords)?, &ClusterAssignment::new(labels)).py()
}

/// Mean inter-cluster over mean intra-cluster Euclidean distance.
#[pyfunction]
fn cluster_ratio(ids: Vec<String>, coords: Vec<Vec<f64>>, labels: BTreeMap<String, String>) -> PyResult<f64> {
    evaluation::cluster_ratio(&embedding(ids, coords)?, &ClusterAssignment::new(labels)).py()
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    evaluation::roc_auc(&scores, &labels).py()
}

/// NDCG@k of ranked relevance flags against `members` relevant items.
#[pyfunction]
#[pyo3(signature = (relevance, members, k, ideal_mode="capped"))]
fn ndcg(relevance: Vec<bool>, members: usize, k: usize, ideal_mode: &str) -> PyResult<f64> {
    Ok(evaluation::ndcg_from_relevance(&relevance, members, k, ideal_mode.parse().py()?))
}

/// Synthetic data; `settings` takes `SynthConfig` field names. Returns
/// `(hierarchy, corpus, groups)` with groups as anchor → member list.
#[pyfunction]
#[pyo3(signature = (settings=None))]
fn synth_generate(settings: Option<BTreeMap<String, String>>) -> PyResult<(PyHierarchy, PyCorpus, BTreeMap<String, Vec<String>>)> {
    let mut cfg = PipelineConfig::default();
    for (k, v) in settings.unwrap_or_default() {
        cfg.set(&format!("synth.{k}"), &v).py()?;
    }
    let data = synth::generate(&cfg.synth).py()?;
    let groups = data
        .groups
        .groups
        .iter()
        .map(|(g, m)| (g.to_string(), m.iter().map(|c| c.to_string()).collect()))
        .collect();
    Ok((PyHierarchy { inner: data.hierarchy }, PyCorpus { inner: data.corpus }, groups))
}

#[pyfunction]
fn synth_chain(n: usize, seed: u64) -> PyResult<PyCorpus> {
    Ok(PyCorpus { inner: synth::generate_chain(n, seed).py()? })
}

/// Default synthetic settings as strings.
#[pyfunction]
fn synth_defaults() -> BTreeMap<String, String> {
    let d = SynthConfig::default();
    PipelineConfig { synth: d, ..PipelineConfig::default() }
        .to_pairs()
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("synth.").map(|k| (k.to_string(), v)))
        .collect()
}

/// Runs the worked example; returns `(all_match, report_text)`.
#[pyfunction]
fn worked_example_demo() -> PyResult<(bool, String)> {
    let r = mdmanifold::worked_example::run_demo().py()?;
    Ok((r.all_match(), r.render()))
}

/// Runs one file-based pipeline stage; returns its metrics as `(name, value)` pairs.
#[pyfunction]
#[pyo3(signature = (stage, settings=None, threads=None))]
fn run_stage(
    py: Python<'_>,
    stage: &str,
    settings: Option<BTreeMap<String, String>>,
    threads: Option<usize>,
) -> PyResult<Vec<(String, f64)>> {
    let stage: Stage = stage.parse().py()?;
    let cfg = config(settings)?;
    let report = py.detach(|| pipeline::run_stage_with_threads(stage, &cfg, threads)).py()?;
    if !report.ok {
        return Err(DataError::new_err(format!("{stage}: check failed")));
    }
    Ok(report.metrics.into_iter().map(|m| (m.metric, m.value)).collect())
}

#[pymodule]
fn mdmanifold_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", pipeline::TOOL_VERSION)?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add_class::<PyHierarchy>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyCooccurrence>()?;
    m.add_function(wrap_pyfunction!(record_distances, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_chain, m)?)?;
    m.add_function(wrap_pyfunction!(synth_defaults, m)?)?;
    m.add_function(wrap_pyfunction!(worked_example_demo, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    Ok(())
}
