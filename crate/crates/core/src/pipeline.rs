//! File-based pipeline stages with run manifests.
//!
//! Every stage reads its inputs from disk, writes its artifacts into the
//! output directory and records a `<stage>.manifest.json` next to them.
//! Artifacts depend only on inputs and configuration; the manifest keeps its
//! one time-dependent field under `timestamp`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{build_cooccurrence, random_projection, CooccurrenceMatrix, OccurrenceMatrix, ProjectedConcepts, RecordCorpus, Vocabulary};
use crate::distances::{
    pairwise_record_distances, str_enum, ConceptDistanceKind, ConceptDistanceTable, ConceptMetric, DistanceMatrix,
    RecordDistanceKind,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    cluster_ratio, knn_auc, ndcg_at_k, random_ndcg_baseline, silhouette, train_test_split, ClusterAssignment,
    ConceptGroups, ConceptSpace, IdealMode, ProjectedMetric,
};
use crate::worked_example;
use crate::graph::{build_knn_graph, connect_components, geodesics, largest_component, KnnGraph};
use crate::hierarchy::{read_edges_tsv, ConceptHierarchy, MissingConceptPolicy};
use crate::spectral::{isomap, laplacian_eigenmap, EmbedMethod, Embedding};
use crate::synth::{self, SynthConfig};

pub const TOOL_NAME: &str = "mdmanifold";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RECORDS_FILE: &str = "records.jsonl";
pub const HIERARCHY_FILE: &str = "hierarchy.tsv";
pub const GROUPS_FILE: &str = "groups.tsv";
pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.tsv";
pub const PROJECTION_FILE: &str = "projection.tsv";
pub const CONCEPT_DISTANCES_FILE: &str = "concept_distances.tsv";
pub const RECORD_DISTANCES_FILE: &str = "record_distances.tsv";
pub const GRAPH_FILE: &str = "knn_graph.tsv";
pub const GRAPH_NODES_FILE: &str = "knn_nodes.txt";
pub const EMBEDDING_FILE: &str = "embedding.tsv";
pub const WORKED_EXAMPLE_FILE: &str = "worked_example.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Augment,
    Cooccur,
    Project,
    ConceptDist,
    RecordDist,
    KnnGraph,
    Embed,
    EvalNdcg,
    EvalCluster,
    EvalAuc,
    Synth,
    DemoFigure3,
}

str_enum!(Stage, "stage",
    "augment" => Stage::Augment,
    "cooccur" => Stage::Cooccur,
    "project" => Stage::Project,
    "concept-dist" => Stage::ConceptDist,
    "record-dist" => Stage::RecordDist,
    "knn-graph" => Stage::KnnGraph,
    "embed" => Stage::Embed,
    "eval-ndcg" => Stage::EvalNdcg,
    "eval-cluster" => Stage::EvalCluster,
    "eval-auc" => Stage::EvalAuc,
    "synth" => Stage::Synth,
    "demo-figure3" => Stage::DemoFigure3,
);

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Augment,
        Stage::Cooccur,
        Stage::Project,
        Stage::ConceptDist,
        Stage::RecordDist,
        Stage::KnnGraph,
        Stage::Embed,
        Stage::EvalNdcg,
        Stage::EvalCluster,
        Stage::EvalAuc,
        Stage::Synth,
        Stage::DemoFigure3,
    ];

    /// Name of the metrics file for evaluation stages.
    fn metrics_file(self) -> String {
        format!("{}.json", self.to_string().replace('-', "_"))
    }
}

/// Which concept sets the record distances compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordView {
    /// The record's own concepts, measured through the augmented co-occurrence matrix.
    #[default]
    Raw,
    /// The record's concepts plus all their ancestors.
    Augmented,
}

str_enum!(RecordView, "record view",
    "raw" => RecordView::Raw,
    "augmented" => RecordView::Augmented,
);

/// How a disconnected k-NN graph is made usable for embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Keep only the largest component and report the dropped records.
    #[default]
    Largest,
    /// Join components with their shortest cross-component edges.
    Bridge,
}

str_enum!(Connectivity, "connectivity mode",
    "largest" => Connectivity::Largest,
    "bridge" => Connectivity::Bridge,
);

/// Concept representation used for NDCG retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NdcgSpace {
    /// Rows of the randomly projected co-occurrence matrix.
    #[default]
    Projected,
    /// The concept distance matrix written by `concept-dist`.
    Distances,
}

str_enum!(NdcgSpace, "ndcg space",
    "projected" => NdcgSpace::Projected,
    "distances" => NdcgSpace::Distances,
);

fn parse_policy(s: &str) -> Result<MissingConceptPolicy> {
    match s {
        "attach" => Ok(MissingConceptPolicy::AttachToRoot),
        "strict" => Ok(MissingConceptPolicy::Strict),
        other => Err(Error::argument(format!(
            "unknown missing-concept policy `{other}` (expected one of: attach, strict)"
        ))),
    }
}

fn policy_name(p: MissingConceptPolicy) -> &'static str {
    match p {
        MissingConceptPolicy::AttachToRoot => "attach",
        MissingConceptPolicy::Strict => "strict",
    }
}

/// All pipeline settings. Input paths default to files inside `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub records: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub missing_concepts: MissingConceptPolicy,
    pub cd_kind: ConceptDistanceKind,
    pub sd_kind: RecordDistanceKind,
    pub record_view: RecordView,
    pub k_nn: usize,
    pub connectivity: Connectivity,
    pub method: EmbedMethod,
    pub dim: usize,
    pub proj_k: usize,
    pub proj_seed: u64,
    pub eps: f64,
    pub ndcg_k: usize,
    pub ideal_mode: IdealMode,
    pub ndcg_space: NdcgSpace,
    pub ndcg_metric: ProjectedMetric,
    pub baseline_trials: usize,
    pub baseline_seed: u64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub k_vote: usize,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            records: None,
            hierarchy: None,
            groups: None,
            out_dir: PathBuf::from("mdmanifold-out"),
            missing_concepts: MissingConceptPolicy::AttachToRoot,
            cd_kind: ConceptDistanceKind::Cosine,
            sd_kind: RecordDistanceKind::Sd1,
            record_view: RecordView::Raw,
            k_nn: 10,
            connectivity: Connectivity::Largest,
            method: EmbedMethod::Isomap,
            dim: 2,
            proj_k: 64,
            proj_seed: 0,
            eps: crate::spectral::DEFAULT_EIGENMAP_EPS,
            ndcg_k: 100,
            ideal_mode: IdealMode::Capped,
            ndcg_space: NdcgSpace::Projected,
            ndcg_metric: ProjectedMetric::Cosine,
            baseline_trials: 100,
            baseline_seed: 0,
            test_fraction: 0.3,
            split_seed: 0,
            k_vote: 10,
            synth: SynthConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::argument(format!("`{key}`: cannot parse `{value}`")))
}

impl PipelineConfig {
    /// Sets one `key = value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let s = &mut self.synth;
        match key {
            "records" => self.records = Some(PathBuf::from(v)),
            "hierarchy" => self.hierarchy = Some(PathBuf::from(v)),
            "groups" => self.groups = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "missing_concepts" => self.missing_concepts = parse_policy(v)?,
            "cd_kind" => self.cd_kind = v.parse()?,
            "sd_kind" => self.sd_kind = v.parse()?,
            "record_view" => self.record_view = v.parse()?,
            "k_nn" => self.k_nn = parse_num(key, v)?,
            "connectivity" => self.connectivity = v.parse()?,
            "method" => self.method = v.parse()?,
            "dim" => self.dim = parse_num(key, v)?,
            "proj_k" => self.proj_k = parse_num(key, v)?,
            "proj_seed" => self.proj_seed = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "ndcg_k" => self.ndcg_k = parse_num(key, v)?,
            "ideal_mode" => self.ideal_mode = v.parse()?,
            "ndcg_space" => self.ndcg_space = v.parse()?,
            "ndcg_metric" => self.ndcg_metric = v.parse()?,
            "baseline_trials" => self.baseline_trials = parse_num(key, v)?,
            "baseline_seed" => self.baseline_seed = parse_num(key, v)?,
            "test_fraction" => self.test_fraction = parse_num(key, v)?,
            "split_seed" => self.split_seed = parse_num(key, v)?,
            "k_vote" => self.k_vote = parse_num(key, v)?,
            "synth.seed" => s.seed = parse_num(key, v)?,
            "synth.depth" => s.depth = parse_num(key, v)?,
            "synth.branching" => s.branching = parse_num(key, v)?,
            "synth.cohorts" => s.cohorts = parse_num(key, v)?,
            "synth.cluster_size" => s.cluster_size = parse_num(key, v)?,
            "synth.records_per_cohort" => s.records_per_cohort = parse_num(key, v)?,
            "synth.min_concepts" => s.min_concepts = parse_num(key, v)?,
            "synth.max_concepts" => s.max_concepts = parse_num(key, v)?,
            "synth.noise" => s.noise = parse_num(key, v)?,
            "synth.flip" => s.flip = parse_num(key, v)?,
            "synth.group_affinity" => s.group_affinity = parse_num(key, v)?,
            _ => return Err(Error::argument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment line.
    pub fn apply_reader<R: BufRead>(&mut self, reader: R, source_name: &str) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |m: String| Error::argument(format!("{source_name}:{}: {m}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::argument(format!("cannot open config {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_reader(BufReader::new(f), &path.display().to_string())?;
        Ok(cfg)
    }

    /// Every setting in `key = value` form, sorted by key.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>, default: &str| {
            p.clone().unwrap_or_else(|| self.out_dir.join(default)).display().to_string()
        };
        let s = &self.synth;
        [
            ("records", path(&self.records, RECORDS_FILE)),
            ("hierarchy", path(&self.hierarchy, HIERARCHY_FILE)),
            ("groups", path(&self.groups, GROUPS_FILE)),
            ("out_dir", self.out_dir.display().to_string()),
            ("missing_concepts", policy_name(self.missing_concepts).to_string()),
            ("cd_kind", self.cd_kind.to_string()),
            ("sd_kind", self.sd_kind.to_string()),
            ("record_view", self.record_view.to_string()),
            ("k_nn", self.k_nn.to_string()),
            ("connectivity", self.connectivity.to_string()),
            ("method", self.method.to_string()),
            ("dim", self.dim.to_string()),
            ("proj_k", self.proj_k.to_string()),
            ("proj_seed", self.proj_seed.to_string()),
            ("eps", format!("{:e}", self.eps)),
            ("ndcg_k", self.ndcg_k.to_string()),
            ("ideal_mode", self.ideal_mode.to_string()),
            ("ndcg_space", self.ndcg_space.to_string()),
            ("ndcg_metric", self.ndcg_metric.to_string()),
            ("baseline_trials", self.baseline_trials.to_string()),
            ("baseline_seed", self.baseline_seed.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("k_vote", self.k_vote.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("synth.depth", s.depth.to_string()),
            ("synth.branching", s.branching.to_string()),
            ("synth.cohorts", s.cohorts.to_string()),
            ("synth.cluster_size", s.cluster_size.to_string()),
            ("synth.records_per_cohort", s.records_per_cohort.to_string()),
            ("synth.min_concepts", s.min_concepts.to_string()),
            ("synth.max_concepts", s.max_concepts.to_string()),
            ("synth.noise", s.noise.to_string()),
            ("synth.flip", s.flip.to_string()),
            ("synth.group_affinity", s.group_affinity.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn records_path(&self) -> PathBuf {
        self.records.clone().unwrap_or_else(|| self.out_dir.join(RECORDS_FILE))
    }

    pub fn hierarchy_path(&self) -> PathBuf {
        self.hierarchy.clone().unwrap_or_else(|| self.out_dir.join(HIERARCHY_FILE))
    }

    pub fn groups_path(&self) -> PathBuf {
        self.groups.clone().unwrap_or_else(|| self.out_dir.join(GROUPS_FILE))
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// One metric value with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Metric {
    fn new(metric: &str, value: f64, params: &[(&str, serde_json::Value)]) -> Self {
        Metric {
            metric: metric.to_string(),
            value,
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }
}

/// What a stage produced.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub metrics: Vec<Metric>,
    /// Human-readable output, when the stage has any.
    pub text: Option<String>,
    /// False when a check-style stage ran but its check failed.
    pub ok: bool,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Timestamp {
    created_unix: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    stage: String,
    config: BTreeMap<String, String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    timestamp: Timestamp,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn manifest_path(cfg: &PipelineConfig, stage: Stage) -> PathBuf {
    cfg.artifact(&format!("{stage}.manifest.json"))
}

fn write_manifest(cfg: &PipelineConfig, report: &StageReport) -> Result<PathBuf> {
    let digests = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        stage: report.stage.to_string(),
        config: cfg.to_pairs(),
        inputs: digests(&report.inputs)?,
        outputs: digests(&report.outputs)?,
        timestamp: Timestamp { created_unix },
    };
    let path = manifest_path(cfg, report.stage);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Opens an artifact produced by `producer`, failing with a usage error when it is absent.
fn open_upstream(path: &Path, producer: Stage) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::argument(format!(
            "missing `{}`; run the `{producer}` stage first",
            path.display()
        )));
    }
    open_input(path)
}

/// Opens a user-supplied input, pointing at the config key when it is absent.
fn open_user_input(path: &Path, key: &str) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::argument(format!(
            "input `{}` not found; set `{key}` or run the `synth` stage first",
            path.display()
        )));
    }
    open_input(path)
}

fn write_output(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    f(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_hierarchy(path: &Path) -> Result<ConceptHierarchy> {
    let name = path.display().to_string();
    ConceptHierarchy::from_edges(read_edges_tsv(open_user_input(path, "hierarchy")?, &name)?)
}

pub fn load_records(path: &Path) -> Result<RecordCorpus> {
    RecordCorpus::read_jsonl(open_user_input(path, "records")?, &path.display().to_string())
}

fn load_upstream_corpus(path: &Path, producer: Stage) -> Result<RecordCorpus> {
    RecordCorpus::read_jsonl(open_upstream(path, producer)?, &path.display().to_string())
}

fn load_cooccurrence(cfg: &PipelineConfig) -> Result<CooccurrenceMatrix> {
    let path = cfg.artifact(COOCCURRENCE_FILE);
    CooccurrenceMatrix::read_tsv(open_upstream(&path, Stage::Cooccur)?, &path.display().to_string())
}

fn load_embedding(cfg: &PipelineConfig) -> Result<Embedding> {
    let path = cfg.artifact(EMBEDDING_FILE);
    Embedding::read_tsv(open_upstream(&path, Stage::Embed)?, &path.display().to_string())
}

/// Hierarchy extended with any corpus concepts it lacks, as leaves of the root.
fn hierarchy_covering(cfg: &PipelineConfig, vocabulary: &Vocabulary) -> Result<ConceptHierarchy> {
    let h = load_hierarchy(&cfg.hierarchy_path())?;
    match cfg.missing_concepts {
        MissingConceptPolicy::AttachToRoot => h.with_orphans(vocabulary.ids()),
        MissingConceptPolicy::Strict => Ok(h),
    }
}

/// Record distance matrix for `corpus` under `cfg`'s CD, SD and record view.
///
/// `cooccurrence` must be built from the augmented corpus; `hierarchy` is
/// required only for the Wu–Palmer concept distance.
pub fn record_distances(
    cfg: &PipelineConfig,
    cooccurrence: &CooccurrenceMatrix,
    hierarchy: Option<&ConceptHierarchy>,
    corpus: &RecordCorpus,
) -> Result<DistanceMatrix> {
    let mut metric = ConceptMetric::new(cfg.cd_kind, cooccurrence);
    if let Some(h) = hierarchy {
        metric = metric.with_hierarchy(h);
    }
    let cd = |a: &crate::hierarchy::ConceptId, b: &crate::hierarchy::ConceptId| metric.distance(a.as_str(), b.as_str());
    pairwise_record_distances(cfg.sd_kind, &cd, corpus)
}

/// In-memory run from a raw corpus to record distances.
pub fn corpus_distances(cfg: &PipelineConfig, hierarchy: &ConceptHierarchy, corpus: &RecordCorpus) -> Result<DistanceMatrix> {
    let augmented = corpus.augment(hierarchy, cfg.missing_concepts)?;
    let c = build_cooccurrence(&OccurrenceMatrix::from_augmented(&augmented)?);
    let view = match cfg.record_view {
        RecordView::Raw => corpus,
        RecordView::Augmented => &augmented,
    };
    let h = if cfg.cd_kind == ConceptDistanceKind::WuPalmer {
        Some(hierarchy.with_orphans(c.vocabulary().ids())?)
    } else {
        None
    };
    record_distances(cfg, &c, h.as_ref(), view)
}

/// k-NN graph after the configured connectivity handling.
#[derive(Debug, Clone)]
pub struct ConnectedGraph {
    pub graph: KnnGraph,
    /// Records removed by `largest` mode.
    pub dropped: Vec<String>,
    /// Edges added by `bridge` mode, as `(i, j, length)` on `graph`'s nodes.
    pub bridges: Vec<(usize, usize, f64)>,
}

pub fn connected_knn_graph(cfg: &PipelineConfig, dm: &DistanceMatrix) -> Result<ConnectedGraph> {
    let g = build_knn_graph(dm, cfg.k_nn)?;
    Ok(match cfg.connectivity {
        Connectivity::Largest => {
            let (graph, dropped) = largest_component(&g);
            if !dropped.is_empty() {
                log::warn!("k-NN graph is disconnected; dropped {} records outside the largest component", dropped.len());
            }
            ConnectedGraph { graph, dropped, bridges: Vec::new() }
        }
        Connectivity::Bridge => {
            let (graph, bridges) = connect_components(&g, dm)?;
            if !bridges.is_empty() {
                log::warn!("k-NN graph is disconnected; added {} bridge edges", bridges.len());
            }
            ConnectedGraph { graph, dropped: Vec::new(), bridges }
        }
    })
}

/// Embeds a connected graph with the configured method and dimension.
pub fn embed_graph(cfg: &PipelineConfig, g: &KnnGraph) -> Result<Embedding> {
    match cfg.method {
        EmbedMethod::Isomap => isomap(&geodesics(g)?, cfg.dim),
        EmbedMethod::Eigenmap => laplacian_eigenmap(g, cfg.dim, cfg.eps),
    }
}

/// Record distances → k-NN graph → embedding, all in memory.
pub fn embed_distances(cfg: &PipelineConfig, dm: &DistanceMatrix) -> Result<(ConnectedGraph, Embedding)> {
    let cg = connected_knn_graph(cfg, dm)?;
    let emb = embed_graph(cfg, &cg.graph)?;
    Ok((cg, emb))
}

fn projected_from_embedding(e: Embedding, seed: u64) -> Result<ProjectedConcepts> {
    let ids = e
        .ids
        .iter()
        .map(crate::hierarchy::ConceptId::new)
        .collect::<Result<Vec<_>>>()?;
    let vocabulary = Vocabulary::new(ids);
    if vocabulary.ids().iter().map(|c| c.as_str()).ne(e.ids.iter().map(String::as_str)) {
        return Err(Error::argument("projection rows must be sorted by concept code without repeats"));
    }
    Ok(ProjectedConcepts { vocabulary, vectors: e.coords, seed })
}

fn labelled_clusters(corpus: &RecordCorpus) -> ClusterAssignment {
    ClusterAssignment::new(
        corpus
            .records
            .iter()
            .filter_map(|r| r.cohort.as_ref().map(|c| (r.id.clone(), c.clone()))),
    )
}

fn labels_for(corpus: &RecordCorpus, ids: &[String]) -> Result<Vec<bool>> {
    let by_id: BTreeMap<&str, Option<bool>> = corpus.records.iter().map(|r| (r.id.as_str(), r.label)).collect();
    ids.iter()
        .map(|id| match by_id.get(id.as_str()) {
            Some(Some(l)) => Ok(*l),
            Some(None) => Err(Error::argument(format!("record `{id}` has no outcome label"))),
            None => Err(Error::UnknownItem(id.clone())),
        })
        .collect()
}

/// Runs one stage and writes its manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageReport> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let report = match stage {
        Stage::Augment => stage_augment(cfg)?,
        Stage::Cooccur => stage_cooccur(cfg)?,
        Stage::Project => stage_project(cfg)?,
        Stage::ConceptDist => stage_concept_dist(cfg)?,
        Stage::RecordDist => stage_record_dist(cfg)?,
        Stage::KnnGraph => stage_knn_graph(cfg)?,
        Stage::Embed => stage_embed(cfg)?,
        Stage::EvalNdcg => stage_eval_ndcg(cfg)?,
        Stage::EvalCluster => stage_eval_cluster(cfg)?,
        Stage::EvalAuc => stage_eval_auc(cfg)?,
        Stage::Synth => stage_synth(cfg)?,
        Stage::DemoFigure3 => stage_demo(cfg)?,
    };
    write_manifest(cfg, &report)?;
    Ok(report)
}

/// [`run_stage`] inside a dedicated pool of `threads` workers (all cores when `None`).
pub fn run_stage_with_threads(stage: Stage, cfg: &PipelineConfig, threads: Option<usize>) -> Result<StageReport> {
    match threads {
        None => run_stage(stage, cfg),
        Some(0) => Err(Error::argument("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::argument(format!("cannot start {n} worker threads: {e}")))?
            .install(|| run_stage(stage, cfg)),
    }
}

fn report(stage: Stage, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> StageReport {
    StageReport { stage, inputs, outputs, metrics: Vec::new(), text: None, ok: true }
}

fn stage_augment(cfg: &PipelineConfig) -> Result<StageReport> {
    let (rp, hp) = (cfg.records_path(), cfg.hierarchy_path());
    let h = load_hierarchy(&hp)?;
    let augmented = load_records(&rp)?.augment(&h, cfg.missing_concepts)?;
    let out = cfg.artifact(AUGMENTED_FILE);
    write_output(&out, |w| augmented.write_jsonl(w))?;
    Ok(report(Stage::Augment, vec![rp, hp], vec![out]))
}

fn stage_cooccur(cfg: &PipelineConfig) -> Result<StageReport> {
    let input = cfg.artifact(AUGMENTED_FILE);
    let augmented = load_upstream_corpus(&input, Stage::Augment)?;
    let c = build_cooccurrence(&OccurrenceMatrix::from_augmented(&augmented)?);
    let out = cfg.artifact(COOCCURRENCE_FILE);
    write_output(&out, |w| c.write_tsv(w))?;
    Ok(report(Stage::Cooccur, vec![input], vec![out]))
}

fn stage_project(cfg: &PipelineConfig) -> Result<StageReport> {
    let c = load_cooccurrence(cfg)?;
    let p = random_projection(&c, cfg.proj_k, cfg.proj_seed)?;
    let ids = p.vocabulary.ids().iter().map(|c| c.to_string()).collect();
    let e = Embedding::new(ids, p.vectors, None)?;
    let out = cfg.artifact(PROJECTION_FILE);
    write_output(&out, |w| e.write_tsv(w))?;
    Ok(report(Stage::Project, vec![cfg.artifact(COOCCURRENCE_FILE)], vec![out]))
}

fn stage_concept_dist(cfg: &PipelineConfig) -> Result<StageReport> {
    let c = load_cooccurrence(cfg)?;
    let mut inputs = vec![cfg.artifact(COOCCURRENCE_FILE)];
    let h = if cfg.cd_kind == ConceptDistanceKind::WuPalmer {
        inputs.push(cfg.hierarchy_path());
        Some(hierarchy_covering(cfg, c.vocabulary())?)
    } else {
        None
    };
    let mut metric = ConceptMetric::new(cfg.cd_kind, &c);
    if let Some(h) = &h {
        metric = metric.with_hierarchy(h);
    }
    let cd = |a: &crate::hierarchy::ConceptId, b: &crate::hierarchy::ConceptId| metric.distance(a.as_str(), b.as_str());
    let table = ConceptDistanceTable::build(&cd, c.vocabulary().ids().iter().cloned())?;
    let out = cfg.artifact(CONCEPT_DISTANCES_FILE);
    write_output(&out, |w| table.to_distance_matrix().write_tsv(w))?;
    Ok(report(Stage::ConceptDist, inputs, vec![out]))
}

fn stage_record_dist(cfg: &PipelineConfig) -> Result<StageReport> {
    let c = load_cooccurrence(cfg)?;
    let view_path = match cfg.record_view {
        RecordView::Raw => cfg.records_path(),
        RecordView::Augmented => cfg.artifact(AUGMENTED_FILE),
    };
    let corpus = match cfg.record_view {
        RecordView::Raw => load_records(&view_path)?,
        RecordView::Augmented => load_upstream_corpus(&view_path, Stage::Augment)?,
    };
    let mut inputs = vec![cfg.artifact(COOCCURRENCE_FILE), view_path];
    let h = if cfg.cd_kind == ConceptDistanceKind::WuPalmer {
        inputs.push(cfg.hierarchy_path());
        Some(hierarchy_covering(cfg, c.vocabulary())?)
    } else {
        None
    };
    let dm = record_distances(cfg, &c, h.as_ref(), &corpus)?;
    let out = cfg.artifact(RECORD_DISTANCES_FILE);
    write_output(&out, |w| dm.write_tsv(w))?;
    Ok(report(Stage::RecordDist, inputs, vec![out]))
}

fn stage_knn_graph(cfg: &PipelineConfig) -> Result<StageReport> {
    let input = cfg.artifact(RECORD_DISTANCES_FILE);
    let dm = DistanceMatrix::read_tsv(open_upstream(&input, Stage::RecordDist)?, &input.display().to_string())?;
    let cg = connected_knn_graph(cfg, &dm)?;
    let (edges, nodes) = (cfg.artifact(GRAPH_FILE), cfg.artifact(GRAPH_NODES_FILE));
    write_output(&edges, |w| cg.graph.write_edge_list(w))?;
    write_output(&nodes, |w| cg.graph.ids().iter().try_for_each(|id| writeln!(w, "{id}")))?;
    let mut r = report(Stage::KnnGraph, vec![input], vec![edges, nodes]);
    let params = [("k_nn", cfg.k_nn.into()), ("connectivity", cfg.connectivity.to_string().into())];
    r.metrics = vec![
        Metric::new("graph_nodes", cg.graph.len() as f64, &params),
        Metric::new("graph_edges", cg.graph.edge_count() as f64, &params),
        Metric::new("dropped_records", cg.dropped.len() as f64, &params),
        Metric::new("bridge_edges", cg.bridges.len() as f64, &params),
    ];
    Ok(r)
}

fn read_graph(cfg: &PipelineConfig) -> Result<KnnGraph> {
    let (edges, nodes) = (cfg.artifact(GRAPH_FILE), cfg.artifact(GRAPH_NODES_FILE));
    let ids = open_upstream(&nodes, Stage::KnnGraph)?
        .lines()
        .map(|l| l.map_err(|e| Error::io(nodes.display().to_string(), e)))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect::<Result<Vec<_>>>()?;
    KnnGraph::read_edge_list(open_upstream(&edges, Stage::KnnGraph)?, ids, &edges.display().to_string())
}

fn stage_embed(cfg: &PipelineConfig) -> Result<StageReport> {
    let g = read_graph(cfg)?;
    let e = embed_graph(cfg, &g)?;
    let out = cfg.artifact(EMBEDDING_FILE);
    write_output(&out, |w| e.write_tsv(w))?;
    Ok(report(
        Stage::Embed,
        vec![cfg.artifact(GRAPH_FILE), cfg.artifact(GRAPH_NODES_FILE)],
        vec![out],
    ))
}

fn write_metrics(cfg: &PipelineConfig, stage: Stage, metrics: &[Metric]) -> Result<PathBuf> {
    let out = cfg.artifact(&stage.metrics_file());
    let mut text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    text.push('\n');
    std::fs::write(&out, text).map_err(|e| Error::io(out.display().to_string(), e))?;
    Ok(out)
}

/// Groups restricted to concepts present in the representation.
fn usable_groups(groups: &ConceptGroups, candidates: &[crate::hierarchy::ConceptId]) -> Result<ConceptGroups> {
    let usable = groups.restricted_to(candidates);
    if usable.len() < groups.len() {
        log::warn!(
            "{} of {} concept groups have no anchor or members in the vocabulary and are skipped",
            groups.len() - usable.len(),
            groups.len()
        );
    }
    if usable.is_empty() {
        return Err(Error::argument("no concept group overlaps the vocabulary"));
    }
    Ok(usable)
}

fn stage_eval_ndcg(cfg: &PipelineConfig) -> Result<StageReport> {
    let gp = cfg.groups_path();
    let groups = ConceptGroups::read_tsv(open_user_input(&gp, "groups")?, &gp.display().to_string())?;
    let (ndcg, groups, candidates, input) = match cfg.ndcg_space {
        NdcgSpace::Projected => {
            let path = cfg.artifact(PROJECTION_FILE);
            let e = Embedding::read_tsv(open_upstream(&path, Stage::Project)?, &path.display().to_string())?;
            let p = projected_from_embedding(e, cfg.proj_seed)?;
            let candidates = p.vocabulary.ids().to_vec();
            let groups = usable_groups(&groups, &candidates)?;
            let v = ndcg_at_k(ConceptSpace::Projected(&p, cfg.ndcg_metric), &groups, &candidates, cfg.ndcg_k, cfg.ideal_mode)?;
            (v, groups, candidates, path)
        }
        NdcgSpace::Distances => {
            let path = cfg.artifact(CONCEPT_DISTANCES_FILE);
            let dm = DistanceMatrix::read_tsv(open_upstream(&path, Stage::ConceptDist)?, &path.display().to_string())?;
            let candidates = dm
                .ids()
                .iter()
                .map(crate::hierarchy::ConceptId::new)
                .collect::<Result<Vec<_>>>()?;
            let groups = usable_groups(&groups, &candidates)?;
            let v = ndcg_at_k(ConceptSpace::Distances(&dm), &groups, &candidates, cfg.ndcg_k, cfg.ideal_mode)?;
            (v, groups, candidates, path)
        }
    };
    let baseline = random_ndcg_baseline(&groups, &candidates, cfg.ndcg_k, cfg.ideal_mode, cfg.baseline_trials, cfg.baseline_seed)?;
    let params = [
        ("k", cfg.ndcg_k.into()),
        ("ideal_mode", cfg.ideal_mode.to_string().into()),
        ("space", cfg.ndcg_space.to_string().into()),
        ("groups", groups.len().into()),
    ];
    let metrics = vec![
        Metric::new("ndcg", ndcg, &params),
        Metric::new("ndcg_random_baseline", baseline, &params),
    ];
    let out = write_metrics(cfg, Stage::EvalNdcg, &metrics)?;
    let mut r = report(Stage::EvalNdcg, vec![gp, input], vec![out]);
    r.metrics = metrics;
    Ok(r)
}

fn stage_eval_cluster(cfg: &PipelineConfig) -> Result<StageReport> {
    let e = load_embedding(cfg)?;
    let rp = cfg.records_path();
    let clusters = labelled_clusters(&load_records(&rp)?);
    let params = [("items", e.len().into()), ("clusters", clusters.cluster_count().into())];
    let metrics = vec![
        Metric::new("silhouette", silhouette(&e, &clusters)?, &params),
        Metric::new("cluster_ratio", cluster_ratio(&e, &clusters)?, &params),
    ];
    let out = write_metrics(cfg, Stage::EvalCluster, &metrics)?;
    let mut r = report(Stage::EvalCluster, vec![cfg.artifact(EMBEDDING_FILE), rp], vec![out]);
    r.metrics = metrics;
    Ok(r)
}

/// AUC of k-NN vote scores on a seeded train/test split of the embedded records.
pub fn embedding_auc(cfg: &PipelineConfig, e: &Embedding, corpus: &RecordCorpus) -> Result<f64> {
    let labels = labels_for(corpus, &e.ids)?;
    let (train, test) = train_test_split(e.len(), cfg.test_fraction, cfg.split_seed)?;
    let pick = |idx: &[usize]| -> Result<(Embedding, Vec<bool>)> {
        let ids: Vec<String> = idx.iter().map(|&i| e.ids[i].clone()).collect();
        Ok((e.select(&ids)?, idx.iter().map(|&i| labels[i]).collect()))
    };
    let (tr, tr_l) = pick(&train)?;
    let (te, te_l) = pick(&test)?;
    knn_auc(&tr, &tr_l, &te, &te_l, cfg.k_vote)
}

fn stage_eval_auc(cfg: &PipelineConfig) -> Result<StageReport> {
    let e = load_embedding(cfg)?;
    let rp = cfg.records_path();
    let auc = embedding_auc(cfg, &e, &load_records(&rp)?)?;
    let params = [
        ("k_vote", cfg.k_vote.into()),
        ("test_fraction", cfg.test_fraction.into()),
        ("split_seed", cfg.split_seed.into()),
    ];
    let metrics = vec![Metric::new("knn_auc", auc, &params)];
    let out = write_metrics(cfg, Stage::EvalAuc, &metrics)?;
    let mut r = report(Stage::EvalAuc, vec![cfg.artifact(EMBEDDING_FILE), rp], vec![out]);
    r.metrics = metrics;
    Ok(r)
}

fn stage_synth(cfg: &PipelineConfig) -> Result<StageReport> {
    let data = synth::generate(&cfg.synth)?;
    let (rp, hp, gp) = (cfg.records_path(), cfg.hierarchy_path(), cfg.groups_path());
    write_output(&rp, |w| data.corpus.write_jsonl(w))?;
    write_output(&hp, |w| data.hierarchy.write_tsv(w))?;
    write_output(&gp, |w| data.groups.write_tsv(w))?;
    Ok(report(Stage::Synth, Vec::new(), vec![rp, hp, gp]))
}

fn stage_demo(cfg: &PipelineConfig) -> Result<StageReport> {
    let demo = worked_example::run_demo()?;
    let text = demo.render();
    let out = cfg.artifact(WORKED_EXAMPLE_FILE);
    std::fs::write(&out, &text).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut r = report(Stage::DemoFigure3, Vec::new(), vec![out]);
    r.ok = demo.all_match();
    r.text = Some(text);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_overrides() {
        let text = "# comment\nk_nn = 5\ncd_kind=ehdn\n\nsynth.noise = 0.25\n";
        let mut cfg = PipelineConfig::default();
        cfg.apply_reader(text.as_bytes(), "run.cfg").unwrap();
        assert_eq!(cfg.k_nn, 5);
        assert_eq!(cfg.cd_kind, ConceptDistanceKind::Ehdn);
        assert_eq!(cfg.synth.noise, 0.25);
        cfg.set("k_nn", "7").unwrap();
        assert_eq!(cfg.k_nn, 7);
    }

    #[test]
    fn config_errors_name_line_and_key() {
        let mut cfg = PipelineConfig::default();
        let e = cfg.apply_reader("dim = 2\nk_nn = lots\n".as_bytes(), "run.cfg").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("run.cfg:2") && msg.contains("k_nn"), "{msg}");
        assert_eq!(e.class(), crate::error::ErrorClass::Usage);
        let e = cfg.apply_reader("colour = red\n".as_bytes(), "run.cfg").unwrap_err();
        assert!(e.to_string().contains("colour"));
        assert!(cfg.apply_reader("just words\n".as_bytes(), "run.cfg").is_err());
        assert!(cfg.set("method", "tsne").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = PipelineConfig { k_nn: 4, dim: 3, ..PipelineConfig::default() };
        cfg.set("method", "eigenmap").unwrap();
        let mut back = PipelineConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back.to_pairs(), cfg.to_pairs());
        assert_eq!(back.method, EmbedMethod::Eigenmap);
    }

    #[test]
    fn stage_names() {
        for s in Stage::ALL {
            assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
        }
        assert_eq!(Stage::EvalNdcg.metrics_file(), "eval_ndcg.json");
    }
}
