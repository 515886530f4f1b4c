//! Patient-record manifolds from hierarchical medical concepts.
//!
//! The flow runs hierarchy → augmented records → co-occurrence → concept
//! distances → record distances → k-NN graph → spectral embedding →
//! evaluation. Each stage lives in its own module and can be used alone.

pub mod assignment;
pub mod corpus;
pub mod distances;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod hierarchy;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod worked_example;

pub use corpus::{
    build_cooccurrence, build_occurrence, random_projection, CooccurrenceMatrix, OccurrenceMatrix,
    ProjectedConcepts, Record, RecordCorpus, Vocabulary,
};
pub use distances::{
    pairwise_record_distances, record_distance, ConceptDistanceKind, ConceptMetric, DistanceMatrix,
    EhdnScale, RecordDistanceKind,
};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{
    cluster_ratio, knn_auc, ndcg_at_k, roc_auc, silhouette, ClusterAssignment, ConceptGroups,
    IdealMode,
};
pub use graph::{build_knn_graph, connect_components, geodesics, largest_component, KnnGraph};
pub use hierarchy::{ConceptHierarchy, ConceptId, MissingConceptPolicy, VIRTUAL_ROOT};
pub use pipeline::{run_stage, PipelineConfig, Stage};
pub use spectral::{isomap, laplacian_eigenmap, sym_eigs, EmbedMethod, Embedding};
pub use synth::{generate, generate_chain, SynthConfig, SynthData};
