//! Representation quality metrics: NDCG@k code referencing, silhouette,
//! inter/intra cluster distance ratio, and a k-NN vote classifier scored by AUC.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ProjectedConcepts;
use crate::distances::{str_enum, DistanceMatrix};
use crate::error::{Error, Result};
use crate::hierarchy::ConceptId;
use crate::spectral::Embedding;

/// Group anchor → member concepts (e.g. a CCS category and its ICD-9 codes).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptGroups {
    pub groups: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
}

impl ConceptGroups {
    pub fn new(groups: BTreeMap<ConceptId, BTreeSet<ConceptId>>) -> Result<Self> {
        if let Some((g, _)) = groups.iter().find(|(_, m)| m.is_empty()) {
            return Err(Error::argument(format!("group `{g}` has no members")));
        }
        Ok(ConceptGroups { groups })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Groups whose anchor is a candidate, with members outside `candidates`
    /// removed; groups left without members are dropped.
    pub fn restricted_to(&self, candidates: &[ConceptId]) -> ConceptGroups {
        let known: BTreeSet<&ConceptId> = candidates.iter().collect();
        let groups = self
            .groups
            .iter()
            .filter(|(anchor, _)| known.contains(anchor))
            .map(|(anchor, members)| {
                let kept: BTreeSet<ConceptId> = members.iter().filter(|m| known.contains(m) && *m != anchor).cloned().collect();
                (anchor.clone(), kept)
            })
            .filter(|(_, m)| !m.is_empty())
            .collect();
        ConceptGroups { groups }
    }

    /// `group_id<TAB>member_id` lines.
    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut groups: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::format(source_name, i + 1, m);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 2 {
                return Err(bad("expected `group_id<TAB>member_id`".into()));
            }
            let g = ConceptId::new(f[0]).map_err(|e| bad(e.to_string()))?;
            let m = ConceptId::new(f[1]).map_err(|e| bad(e.to_string()))?;
            groups.entry(g).or_default().insert(m);
        }
        ConceptGroups::new(groups)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (g, members) in &self.groups {
            for m in members {
                writeln!(w, "{g}\t{m}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdealMode {
    /// IDCG sums over all `x_i` members even when `x_i > k`.
    Literal,
    /// IDCG sums over `min(k, x_i)` positions, so perfect retrieval scores 1.
    #[default]
    Capped,
}

str_enum!(IdealMode, "ideal mode",
    "literal" => IdealMode::Literal,
    "capped" => IdealMode::Capped,
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectedMetric {
    #[default]
    Cosine,
    Euclidean,
}

str_enum!(ProjectedMetric, "projected-space metric",
    "cosine" => ProjectedMetric::Cosine,
    "euclidean" => ProjectedMetric::Euclidean,
);

/// Where concept-to-concept closeness comes from for retrieval.
#[derive(Debug, Clone, Copy)]
pub enum ConceptSpace<'a> {
    Projected(&'a ProjectedConcepts, ProjectedMetric),
    Distances(&'a DistanceMatrix),
}

impl ConceptSpace<'_> {
    fn distance(&self, a: &str, b: &str) -> Result<f64> {
        match *self {
            ConceptSpace::Projected(p, metric) => {
                let ra = p.vectors.row(p.vocabulary.index_of(a)?);
                let rb = p.vectors.row(p.vocabulary.index_of(b)?);
                match metric {
                    ProjectedMetric::Euclidean => Ok((ra - rb).norm()),
                    ProjectedMetric::Cosine => {
                        let (na, nb) = (ra.norm(), rb.norm());
                        if na == 0.0 || nb == 0.0 {
                            let z = if na == 0.0 { a } else { b };
                            return Err(Error::Degenerate(format!("concept `{z}` has a zero projected vector")));
                        }
                        Ok(1.0 - ra.dot(&rb) / (na * nb))
                    }
                }
            }
            ConceptSpace::Distances(dm) => {
                let i = dm.index_of(a).map_err(|_| Error::UnknownConcept(a.to_string()))?;
                let j = dm.index_of(b).map_err(|_| Error::UnknownConcept(b.to_string()))?;
                Ok(dm.get(i, j))
            }
        }
    }
}

/// Base-2 discount `1 / log2(p + 1)` for 1-based position `p`.
fn discount(p: usize) -> f64 {
    1.0 / ((p + 1) as f64).log2()
}

/// NDCG@k of a ranked relevance list against `members` relevant items.
pub fn ndcg_from_relevance(relevance: &[bool], members: usize, k: usize, mode: IdealMode) -> f64 {
    let dcg: f64 = relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(p, _)| discount(p + 1))
        .sum();
    let ideal_len = match mode {
        IdealMode::Literal => members,
        IdealMode::Capped => members.min(k),
    };
    let idcg: f64 = (1..=ideal_len).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean NDCG@k over groups: each anchor ranks `candidates` by ascending
/// distance (ties by ascending code) and members count as relevant.
pub fn ndcg_at_k(
    space: ConceptSpace<'_>,
    groups: &ConceptGroups,
    candidates: &[ConceptId],
    k: usize,
    mode: IdealMode,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::argument("k must be at least 1"));
    }
    if groups.is_empty() {
        return Err(Error::argument("no concept groups"));
    }
    let mut total = 0.0;
    for (anchor, members) in &groups.groups {
        let mut ranked = candidates
            .iter()
            .filter(|c| *c != anchor)
            .map(|c| space.distance(anchor.as_str(), c.as_str()).map(|d| (d, c)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));
        let relevance: Vec<bool> = ranked.iter().map(|(_, c)| members.contains(*c)).collect();
        total += ndcg_from_relevance(&relevance, members.len(), k, mode);
    }
    Ok(total / groups.len() as f64)
}

/// Monte-Carlo NDCG@k when each anchor's candidate list is a uniformly random permutation.
pub fn random_ndcg_baseline(
    groups: &ConceptGroups,
    candidates: &[ConceptId],
    k: usize,
    mode: IdealMode,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 || groups.is_empty() {
        return Err(Error::argument("need at least one trial and one group"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        for (anchor, members) in &groups.groups {
            let mut pool: Vec<&ConceptId> = candidates.iter().filter(|c| *c != anchor).collect();
            pool.shuffle(&mut rng);
            let relevance: Vec<bool> = pool.iter().map(|c| members.contains(*c)).collect();
            total += ndcg_from_relevance(&relevance, members.len(), k, mode);
        }
    }
    Ok(total / (trials * groups.len()) as f64)
}

/// Item → cluster label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: BTreeMap<String, String>,
}

impl ClusterAssignment {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        ClusterAssignment {
            labels: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.values().collect::<BTreeSet<_>>().len()
    }

    /// Dense cluster indices aligned with `ids`; every id must be labelled.
    pub fn align(&self, ids: &[String]) -> Result<Vec<usize>> {
        let mut codes: HashMap<&str, usize> = HashMap::new();
        for l in self.labels.values().collect::<BTreeSet<_>>() {
            let next = codes.len();
            codes.insert(l, next);
        }
        ids.iter()
            .map(|id| {
                self.labels
                    .get(id)
                    .map(|l| codes[l.as_str()])
                    .ok_or_else(|| Error::UnknownItem(id.clone()))
            })
            .collect()
    }
}

/// Pairwise distances between items for the cluster metrics.
pub trait ItemDistances {
    fn item_ids(&self) -> &[String];
    fn item_distance(&self, i: usize, j: usize) -> f64;
}

impl ItemDistances for DistanceMatrix {
    fn item_ids(&self) -> &[String] {
        self.ids()
    }
    fn item_distance(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

impl ItemDistances for Embedding {
    fn item_ids(&self) -> &[String] {
        &self.ids
    }
    fn item_distance(&self, i: usize, j: usize) -> f64 {
        self.euclidean(i, j)
    }
}

fn aligned_labels<D: ItemDistances + ?Sized>(space: &D, clusters: &ClusterAssignment) -> Result<(Vec<usize>, usize)> {
    let labels = clusters.align(space.item_ids())?;
    let k = labels.iter().collect::<BTreeSet<_>>().len();
    if k < 2 {
        return Err(Error::argument(format!("need at least 2 clusters, found {k}")));
    }
    Ok((labels, k))
}

/// `R = mean inter-cluster distance / mean intra-cluster distance`, pooled over pairs.
pub fn cluster_ratio<D: ItemDistances + ?Sized>(space: &D, clusters: &ClusterAssignment) -> Result<f64> {
    let (labels, _) = aligned_labels(space, clusters)?;
    let n = labels.len();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let d = space.item_distance(i, j);
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(Error::Degenerate("no intra-cluster pairs (all clusters are singletons)".into()));
    }
    let (d_intra, d_inter) = (intra / n_intra as f64, inter / n_inter as f64);
    if d_intra == 0.0 {
        return Err(Error::Degenerate(format!(
            "mean intra-cluster distance is 0 (inter = {d_inter}); ratio undefined"
        )));
    }
    Ok(d_inter / d_intra)
}

/// Mean silhouette; items alone in their cluster score 0.
pub fn silhouette<D: ItemDistances + ?Sized>(space: &D, clusters: &ClusterAssignment) -> Result<f64> {
    let (labels, k) = aligned_labels(space, clusters)?;
    let n = labels.len();
    let mut size = vec![0usize; k];
    for &l in &labels {
        size[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if size[labels[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += space.item_distance(i, j);
            }
        }
        let a = sums[labels[i]] / (size[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i])
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Mann–Whitney AUC of `scores` against binary `labels`, ties counted ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::argument("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::argument("AUC needs both classes"));
    }
    // Rank-sum with average ranks for ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..labels.len()).filter(|&i| labels[i]).map(|i| ranks[i]).sum();
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Fraction of positive labels among each test item's `k_vote` nearest train items.
pub fn knn_scores(train: &Embedding, train_labels: &[bool], test: &Embedding, k_vote: usize) -> Result<Vec<f64>> {
    if train.len() != train_labels.len() {
        return Err(Error::argument("train embedding and labels differ in length"));
    }
    if train.dim() != test.dim() {
        return Err(Error::argument("train and test embeddings differ in dimension"));
    }
    if k_vote == 0 || k_vote > train.len() {
        return Err(Error::argument(format!("k_vote={k_vote} outside 1..={}", train.len())));
    }
    if train_labels.iter().all(|&l| l) || train_labels.iter().all(|&l| !l) {
        return Err(Error::argument("training labels contain a single class"));
    }
    Ok((0..test.len())
        .map(|t| {
            let row = test.coords.row(t);
            let mut d: Vec<(f64, usize)> = (0..train.len())
                .map(|i| ((train.coords.row(i) - row).norm_squared(), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..k_vote].iter().filter(|&&(_, i)| train_labels[i]).count() as f64 / k_vote as f64
        })
        .collect())
}

pub fn knn_auc(
    train: &Embedding,
    train_labels: &[bool],
    test: &Embedding,
    test_labels: &[bool],
    k_vote: usize,
) -> Result<f64> {
    if test.len() != test_labels.len() {
        return Err(Error::argument("test embedding and labels differ in length"));
    }
    roc_auc(&knn_scores(train, train_labels, test, k_vote)?, test_labels)
}

/// Seeded split of item indices into `(train, test)`, test share `test_fraction`.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::argument(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, n.saturating_sub(1).max(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn line(xs: &[f64]) -> Embedding {
        let ids = (0..xs.len()).map(|i| format!("p{i}")).collect();
        Embedding::new(ids, DMatrix::from_column_slice(xs.len(), 1, xs), None).unwrap()
    }

    fn labels(assign: &[&str]) -> ClusterAssignment {
        ClusterAssignment::new(assign.iter().enumerate().map(|(i, l)| (format!("p{i}"), *l)))
    }

    #[test]
    fn ndcg_hand_values() {
        // Single relevant item at position 2, k = 2, capped.
        let v = ndcg_from_relevance(&[false, true], 1, 2, IdealMode::Capped);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        // Perfect retrieval scores 1 in capped mode.
        assert_eq!(ndcg_from_relevance(&[true, true, false], 2, 3, IdealMode::Capped), 1.0);
        // Literal ideal can exceed what k allows.
        let lit = ndcg_from_relevance(&[true, true], 3, 2, IdealMode::Literal);
        assert!(lit < 1.0);
        assert_eq!(ndcg_from_relevance(&[true, true], 3, 2, IdealMode::Capped), 1.0);
    }

    #[test]
    fn ndcg_over_distance_space() {
        let ids: Vec<String> = ["G", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        // Distances from G: a 0.1, b 0.3, c 0.2, d 0.4.
        let from_g = [0.0, 0.1, 0.3, 0.2, 0.4];
        let dm = DistanceMatrix::from_fn(ids, |i, j| if i == 0 { from_g[j] } else { 1.0 });
        let groups = ConceptGroups::new(BTreeMap::from([(cid("G"), BTreeSet::from([cid("a"), cid("b")]))])).unwrap();
        let candidates = ["a", "b", "c", "d"].map(cid);
        // Ranking a, c, b, d: relevant at 1 and 3.
        let v = ndcg_at_k(ConceptSpace::Distances(&dm), &groups, &candidates, 4, IdealMode::Capped).unwrap();
        let want = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((v - want).abs() < 1e-15);

        let missing = ConceptGroups::new(BTreeMap::from([(cid("Z"), BTreeSet::from([cid("a")]))])).unwrap();
        assert!(matches!(
            ndcg_at_k(ConceptSpace::Distances(&dm), &missing, &candidates, 4, IdealMode::Capped),
            Err(Error::UnknownConcept(_))
        ));
    }

    #[test]
    fn cluster_ratio_by_pair_enumeration() {
        let xs = [0.0, 1.0, 2.0, 102.0, 103.0, 104.0];
        let e = line(&xs);
        let c = labels(&["a", "a", "a", "b", "b", "b"]);
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..6 {
            for j in i + 1..6 {
                let d = (xs[i] - xs[j]).abs();
                if (i < 3) == (j < 3) {
                    intra += d;
                    ni += 1;
                } else {
                    inter += d;
                    nx += 1;
                }
            }
        }
        assert_eq!(ni + nx, 15);
        let want = (inter / nx as f64) / (intra / ni as f64);
        assert!((cluster_ratio(&e, &c).unwrap() - want).abs() < 1e-12);
        assert!((want - 76.5).abs() < 1e-12);
    }

    #[test]
    fn cluster_ratio_degenerate_cases() {
        let same = line(&[3.0, 3.0, 3.0, 3.0]);
        assert!(matches!(cluster_ratio(&same, &labels(&["a", "a", "b", "b"])), Err(Error::Degenerate(_))));
        let singles = line(&[0.0, 1.0]);
        assert!(matches!(cluster_ratio(&singles, &labels(&["a", "b"])), Err(Error::Degenerate(_))));
        // Symmetric layout: a regular simplex, every pair at the same distance.
        let ids = (0..4).map(|i| format!("p{i}")).collect();
        let simplex = Embedding::new(ids, DMatrix::identity(4, 4) * 0.5f64.sqrt(), None).unwrap();
        let r = cluster_ratio(&simplex, &labels(&["a", "b", "b", "a"])).unwrap();
        assert!((r - 1.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn silhouette_cases() {
        let tight = line(&[0.0, 0.1, 10.0, 10.1]);
        let s = silhouette(&tight, &labels(&["a", "a", "b", "b"])).unwrap();
        assert!(s > 0.9, "{s}");
        let two = line(&[0.0, 5.0]);
        assert_eq!(silhouette(&two, &labels(&["a", "b"])).unwrap(), 0.0);
        assert!(matches!(silhouette(&two, &labels(&["a", "a"])), Err(Error::Argument(_))));
        assert!(matches!(silhouette(&two, &labels(&["a"])), Err(Error::UnknownItem(_))));
    }

    #[test]
    fn auc_cases() {
        let l = [true, true, true, false, false, false];
        assert_eq!(roc_auc(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &l).unwrap(), 0.5);
        // One negative outranks one positive: 8 of 9 pairs ordered.
        let v = roc_auc(&[0.9, 0.8, 0.4, 0.5, 0.2, 0.1], &l).unwrap();
        assert!((v - 8.0 / 9.0).abs() < 1e-15);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn knn_vote_classifier() {
        let train = line(&[0.0, 0.1, 0.2, 5.0, 5.1, 5.2]);
        let tl = [false, false, false, true, true, true];
        let test = line(&[0.05, 5.05, 4.9, 0.3]);
        let auc = knn_auc(&train, &tl, &test, &[false, true, true, false], 3).unwrap();
        assert_eq!(auc, 1.0);
        assert!(knn_auc(&train, &[true; 6], &test, &[false, true, true, false], 3).is_err());
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (tr, te) = train_test_split(10, 0.3, 5).unwrap();
        assert_eq!(te.len(), 3);
        assert_eq!(tr.len(), 7);
        assert!(te.iter().all(|i| !tr.contains(i)));
        assert_eq!(train_test_split(10, 0.3, 5).unwrap(), (tr, te));
    }

    #[test]
    fn groups_tsv_round_trip() {
        let text = "G1\ta\nG1\tb\nG2\tc\n";
        let g = ConceptGroups::read_tsv(text.as_bytes(), "g").unwrap();
        assert_eq!(g.len(), 2);
        let mut out = Vec::new();
        g.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
