//! Deterministic synthetic corpora.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (the ChaCha
//! stream cipher with 8 rounds, as implemented by `rand_chacha`), consumed in
//! a fixed order, so a seed pins the output byte for byte.
//!
//! Hierarchy codes are `C` followed by one base-36 digit per level, so a code
//! is a prefix of all its descendants (`C1` ⊃ `C12` ⊃ `C123`).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Record, RecordCorpus};
use crate::error::{Error, Result};
use crate::evaluation::{ClusterAssignment, ConceptGroups};
use crate::hierarchy::{ConceptHierarchy, ConceptId, VIRTUAL_ROOT};

const DIGITS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Levels below the virtual root; leaves sit at this depth.
    pub depth: usize,
    pub branching: usize,
    pub cohorts: usize,
    /// Leaves owned by each cohort, taken as consecutive runs of the sorted leaves.
    pub cluster_size: usize,
    pub records_per_cohort: usize,
    pub min_concepts: usize,
    pub max_concepts: usize,
    /// Chance that a concept is drawn from all leaves instead of the cohort's cluster.
    pub noise: f64,
    /// Chance that a record's outcome label is flipped away from its cohort's outcome.
    pub flip: f64,
    /// Chance that an in-cluster concept comes from the record's focus group
    /// (one parent node inside the cluster), which induces sibling co-occurrence.
    pub group_affinity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            depth: 3,
            branching: 4,
            cohorts: 3,
            cluster_size: 16,
            records_per_cohort: 100,
            min_concepts: 3,
            max_concepts: 6,
            noise: 0.1,
            flip: 0.1,
            group_affinity: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn leaf_count(&self) -> usize {
        self.branching.saturating_pow(self.depth as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("depth", self.depth),
            ("branching", self.branching),
            ("cohorts", self.cohorts),
            ("cluster_size", self.cluster_size),
            ("records_per_cohort", self.records_per_cohort),
            ("min_concepts", self.min_concepts),
            ("max_concepts", self.max_concepts),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::argument(format!("synth: {name} must be at least 1")));
        }
        for (name, p) in [("noise", self.noise), ("flip", self.flip), ("group_affinity", self.group_affinity)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::argument(format!("synth: {name}={p} outside [0, 1]")));
            }
        }
        if self.depth < 2 {
            return Err(Error::argument("synth: depth must be at least 2 so leaves have group parents"));
        }
        if self.branching > DIGITS.len() {
            return Err(Error::argument(format!("synth: branching above {}", DIGITS.len())));
        }
        if self.leaf_count() > 1_000_000 {
            return Err(Error::argument("synth: more than 1e6 leaves"));
        }
        if self.cohorts * self.cluster_size > self.leaf_count() {
            return Err(Error::argument(format!(
                "synth: {} cohorts x {} concepts exceed the {} leaves",
                self.cohorts,
                self.cluster_size,
                self.leaf_count()
            )));
        }
        if self.min_concepts > self.max_concepts || self.max_concepts > self.cluster_size {
            return Err(Error::argument(
                "synth: need min_concepts <= max_concepts <= cluster_size",
            ));
        }
        Ok(())
    }
}

/// Everything a synthetic run produces.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub hierarchy: ConceptHierarchy,
    pub corpus: RecordCorpus,
    /// Parents of leaves and their leaf children.
    pub groups: ConceptGroups,
    /// Record id → cohort name.
    pub cohorts: ClusterAssignment,
}

fn balanced_tree(depth: usize, branching: usize) -> Vec<Vec<String>> {
    let mut levels: Vec<Vec<String>> = vec![(0..branching).map(|d| format!("C{}", DIGITS[d] as char)).collect()];
    for _ in 1..depth {
        let next = levels
            .last()
            .unwrap()
            .iter()
            .flat_map(|p| (0..branching).map(move |d| format!("{p}{}", DIGITS[d] as char)))
            .collect();
        levels.push(next);
    }
    levels
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let levels = balanced_tree(cfg.depth, cfg.branching);
    let id = |s: &str| ConceptId::new(s).expect("generated codes are valid");

    let mut edges: Vec<(ConceptId, ConceptId)> = levels[0].iter().map(|c| (id(c), id(VIRTUAL_ROOT))).collect();
    for level in &levels[1..] {
        for c in level {
            edges.push((id(c), id(&c[..c.len() - 1])));
        }
    }
    let hierarchy = ConceptHierarchy::from_edges(edges)?;

    let leaves: Vec<ConceptId> = levels.last().unwrap().iter().map(|c| id(c)).collect();
    let parent_of = |leaf: &ConceptId| id(&leaf.as_str()[..leaf.as_str().len() - 1]);

    let mut groups: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
    for leaf in &leaves {
        groups.entry(parent_of(leaf)).or_default().insert(leaf.clone());
    }
    let groups = ConceptGroups::new(groups)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.cohorts * cfg.records_per_cohort);
    let mut cohort_of = Vec::new();
    for c in 0..cfg.cohorts {
        let cluster = &leaves[c * cfg.cluster_size..(c + 1) * cfg.cluster_size];
        let focus_groups: Vec<ConceptId> = cluster.iter().map(parent_of).collect::<BTreeSet<_>>().into_iter().collect();
        let cohort_name = format!("cohort{c}");
        let cohort_positive = c % 2 == 1;
        for _ in 0..cfg.records_per_cohort {
            let size = rng.random_range(cfg.min_concepts..=cfg.max_concepts);
            let focus = &focus_groups[rng.random_range(0..focus_groups.len())];
            let focus_members: Vec<&ConceptId> = cluster.iter().filter(|l| parent_of(l) == *focus).collect();
            let mut concepts = BTreeSet::new();
            while concepts.len() < size {
                let pick = if rng.random::<f64>() < cfg.noise {
                    &leaves[rng.random_range(0..leaves.len())]
                } else if rng.random::<f64>() < cfg.group_affinity {
                    focus_members[rng.random_range(0..focus_members.len())]
                } else {
                    &cluster[rng.random_range(0..cluster.len())]
                };
                concepts.insert(pick.clone());
            }
            let label = cohort_positive ^ (rng.random::<f64>() < cfg.flip);
            let rid = format!("rec{:05}", records.len());
            cohort_of.push((rid.clone(), cohort_name.clone()));
            records.push(
                Record::new(rid, concepts, 1)?
                    .with_label(label)
                    .with_cohort(cohort_name.clone()),
            );
        }
    }

    Ok(SynthData {
        hierarchy,
        corpus: RecordCorpus::new(records),
        groups,
        cohorts: ClusterAssignment::new(cohort_of),
    })
}

/// Concepts shared by consecutive chain records.
pub const CHAIN_WIDTH: usize = 6;

/// A 1-D chain of records: record `i` holds concepts `i .. i + CHAIN_WIDTH`,
/// so overlap shrinks with index distance. The seed only permutes concept
/// codes, leaving all distances unchanged.
pub fn generate_chain(n: usize, seed: u64) -> Result<RecordCorpus> {
    if n < 4 {
        return Err(Error::argument(format!("chain needs at least 4 records, got {n}")));
    }
    let n_concepts = n + CHAIN_WIDTH - 1;
    let mut labels: Vec<usize> = (0..n_concepts).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let code = |k: usize| ConceptId::new(format!("k{:05}", labels[k])).expect("valid code");
    let records = (0..n)
        .map(|i| Record::new(format!("chain{i:05}"), (i..i + CHAIN_WIDTH).map(code), 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecordCorpus::new(records))
}

/// One-level hierarchy holding every concept of `corpus` directly under the root.
pub fn flat_hierarchy(corpus: &RecordCorpus) -> Result<ConceptHierarchy> {
    let root = ConceptId::new(VIRTUAL_ROOT)?;
    ConceptHierarchy::from_edges(corpus.vocabulary().ids().iter().map(|c| (c.clone(), root.clone())))
}
