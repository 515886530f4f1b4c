//! Concept-set records, ancestor augmentation and the occurrence /
//! co-occurrence matrices built from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ConceptHierarchy, ConceptId, MissingConceptPolicy};

/// One (possibly collapsed) record: a set of concepts seen together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub concepts: BTreeSet<ConceptId>,
    /// Number of identical raw records this row stands for.
    pub frequency: u64,
    pub label: Option<bool>,
    pub cohort: Option<String>,
}

impl Record {
    pub fn new<I>(id: impl Into<String>, concepts: I, frequency: u64) -> Result<Self>
    where
        I: IntoIterator<Item = ConceptId>,
    {
        let id = id.into();
        let concepts: BTreeSet<ConceptId> = concepts.into_iter().collect();
        if concepts.is_empty() {
            return Err(Error::argument(format!("record `{id}` has no concepts")));
        }
        if frequency == 0 {
            return Err(Error::argument(format!("record `{id}` has frequency 0")));
        }
        Ok(Record {
            id,
            concepts,
            frequency,
            label: None,
            cohort: None,
        })
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_cohort(mut self, cohort: impl Into<String>) -> Self {
        self.cohort = Some(cohort.into());
        self
    }
}

/// Serialized form of one JSONL record line.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    codes: Vec<String>,
    #[serde(default = "one")]
    freq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cohort: Option<String>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordCorpus {
    pub records: Vec<Record>,
}

impl RecordCorpus {
    pub fn new(records: Vec<Record>) -> Self {
        RecordCorpus { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Sorted union of all concepts in the corpus.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_sorted(
            self.records
                .iter()
                .flat_map(|r| r.concepts.iter().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        )
    }

    /// Replaces every record by its ancestor-augmented version.
    pub fn augment(&self, h: &ConceptHierarchy, policy: MissingConceptPolicy) -> Result<Self> {
        self.records
            .iter()
            .map(|r| augment_record(h, r, policy))
            .collect::<Result<Vec<_>>>()
            .map(RecordCorpus::new)
    }

    /// Merges records with identical concept sets, label and cohort, summing frequencies.
    /// The first id of each group is kept; first-occurrence order is preserved.
    pub fn collapse_duplicates(&self) -> Self {
        type Key = (BTreeSet<ConceptId>, Option<bool>, Option<String>);
        let mut slot: HashMap<Key, usize> = HashMap::new();
        let mut out: Vec<Record> = Vec::new();
        for r in &self.records {
            let key = (r.concepts.clone(), r.label, r.cohort.clone());
            match slot.get(&key) {
                Some(&i) => out[i].frequency += r.frequency,
                None => {
                    slot.insert(key, out.len());
                    out.push(r.clone());
                }
            }
        }
        RecordCorpus::new(out)
    }

    pub fn read_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::format(source_name, i + 1, msg);
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let concepts = parsed
                .codes
                .into_iter()
                .map(ConceptId::new)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| bad(e.to_string()))?;
            let mut record =
                Record::new(parsed.id, concepts, parsed.freq).map_err(|e| bad(e.to_string()))?;
            record.label = match parsed.label {
                None => None,
                Some(0) => Some(false),
                Some(1) => Some(true),
                Some(other) => return Err(bad(format!("label must be 0 or 1, found {other}"))),
            };
            record.cohort = parsed.cohort;
            records.push(record);
        }
        Ok(RecordCorpus::new(records))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                codes: r.concepts.iter().map(|c| c.to_string()).collect(),
                freq: r.frequency,
                label: r.label.map(u8::from),
                cohort: r.cohort.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Adds every proper ancestor of every concept in `r` (the virtual root excluded).
pub fn augment_record(
    h: &ConceptHierarchy,
    r: &Record,
    policy: MissingConceptPolicy,
) -> Result<Record> {
    let mut concepts = r.concepts.clone();
    for c in &r.concepts {
        match h.ancestors(c.as_str()) {
            Ok(anc) => concepts.extend(anc.into_iter().cloned()),
            Err(Error::UnknownConcept(_)) if policy == MissingConceptPolicy::AttachToRoot => {
                log::warn!("record `{}`: concept `{c}` not in hierarchy, kept without ancestors", r.id);
            }
            Err(e) => return Err(Error::in_record(r.id.clone(), e)),
        }
    }
    Ok(Record {
        concepts,
        ..r.clone()
    })
}

/// Ordered concept list with reverse lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<ConceptId>,
    index: HashMap<ConceptId, usize>,
}

impl Vocabulary {
    fn from_sorted(ids: Vec<ConceptId>) -> Self {
        let index = ids.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        Vocabulary { ids, index }
    }

    /// Sorts and deduplicates `ids`.
    pub fn new<I: IntoIterator<Item = ConceptId>>(ids: I) -> Self {
        Self::from_sorted(ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ConceptId] {
        &self.ids
    }

    pub fn get(&self, i: usize) -> &ConceptId {
        &self.ids[i]
    }

    pub fn index_of(&self, c: &str) -> Result<usize> {
        self.index
            .get(c)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(c.to_string()))
    }
}

/// Binary record × concept incidence with per-row frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceMatrix {
    pub vocabulary: Vocabulary,
    pub record_ids: Vec<String>,
    /// Sorted column indices of the ones in each row.
    pub rows: Vec<Vec<usize>>,
    pub frequencies: Vec<u64>,
}

impl OccurrenceMatrix {
    /// Builds O from records that are already augmented.
    pub fn from_augmented(corpus: &RecordCorpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::argument("corpus is empty"));
        }
        let vocabulary = corpus.vocabulary();
        let rows = corpus
            .records
            .iter()
            .map(|r| r.concepts.iter().map(|c| vocabulary.index[c]).collect())
            .collect();
        Ok(OccurrenceMatrix {
            vocabulary,
            record_ids: corpus.ids(),
            rows,
            frequencies: corpus.records.iter().map(|r| r.frequency).collect(),
        })
    }

    pub fn to_dense(&self) -> DMatrix<u8> {
        let mut m = DMatrix::zeros(self.rows.len(), self.vocabulary.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                m[(i, j)] = 1;
            }
        }
        m
    }
}

/// Augments `corpus` over `h` and builds the occurrence matrix.
pub fn build_occurrence(
    h: &ConceptHierarchy,
    corpus: &RecordCorpus,
    policy: MissingConceptPolicy,
) -> Result<OccurrenceMatrix> {
    if corpus.is_empty() {
        return Err(Error::argument("corpus is empty"));
    }
    OccurrenceMatrix::from_augmented(&corpus.augment(h, policy)?)
}

/// Symmetric concept × concept counts `C = Oᵀ diag(f) O`, stored by sparse rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    vocabulary: Vocabulary,
    /// Row `a`: sorted `(b, C_ab)` with `C_ab > 0`.
    rows: Vec<Vec<(usize, u64)>>,
}

impl CooccurrenceMatrix {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn row(&self, a: usize) -> &[(usize, u64)] {
        &self.rows[a]
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        let row = &self.rows[a];
        row.binary_search_by_key(&b, |&(j, _)| j)
            .map(|k| row[k].1)
            .unwrap_or(0)
    }

    pub fn get_by_id(&self, a: &str, b: &str) -> Result<u64> {
        Ok(self.get(self.vocabulary.index_of(a)?, self.vocabulary.index_of(b)?))
    }

    pub fn row_sum(&self, a: usize) -> u64 {
        self.rows[a].iter().map(|&(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (a, row) in self.rows.iter().enumerate() {
            for &(b, v) in row {
                m[(a, b)] = v as f64;
            }
        }
        m
    }

    /// Assembles C from upper-or-lower triangle entries; each unordered pair is
    /// mirrored. Zero counts are dropped. Duplicate pairs are an error.
    pub fn from_triplets<I>(vocabulary: Vocabulary, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u64)>,
    {
        let n = vocabulary.len();
        let mut rows: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
        for (a, b, v) in entries {
            if a >= n || b >= n {
                return Err(Error::argument(format!("entry ({a}, {b}) outside {n}x{n} matrix")));
            }
            if rows[a].insert(b, v).is_some() {
                return Err(Error::argument(format!(
                    "duplicate co-occurrence entry for ({}, {})",
                    vocabulary.get(a),
                    vocabulary.get(b)
                )));
            }
            rows[b].insert(a, v);
        }
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().filter(|&(_, v)| v > 0).collect())
            .collect();
        Ok(CooccurrenceMatrix { vocabulary, rows })
    }

    /// Writes `a<TAB>b<TAB>count` for every nonzero entry with `a <= b` in vocabulary order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (a, row) in self.rows.iter().enumerate() {
            for &(b, v) in row.iter().filter(|&&(b, _)| b >= a) {
                writeln!(w, "{}\t{}\t{v}", self.vocabulary.get(a), self.vocabulary.get(b))?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::format(source_name, i + 1, msg);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected `a<TAB>b<TAB>count`".into()));
            }
            let a = ConceptId::new(f[0]).map_err(|e| bad(e.to_string()))?;
            let b = ConceptId::new(f[1]).map_err(|e| bad(e.to_string()))?;
            let v: u64 = f[2].parse().map_err(|_| bad(format!("bad count `{}`", f[2])))?;
            raw.push((a, b, v));
        }
        let vocabulary = Vocabulary::new(raw.iter().flat_map(|(a, b, _)| [a.clone(), b.clone()]));
        let entries: Vec<_> = raw
            .iter()
            .map(|(a, b, v)| (vocabulary.index[a], vocabulary.index[b], *v))
            .collect();
        Self::from_triplets(vocabulary, entries)
    }
}

/// Each record contributes its frequency to every concept pair it contains, self-pairs included.
pub fn build_cooccurrence(o: &OccurrenceMatrix) -> CooccurrenceMatrix {
    let n = o.vocabulary.len();
    let mut acc: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
    for (row, &f) in o.rows.iter().zip(&o.frequencies) {
        for &a in row {
            for &b in row {
                *acc[a].entry(b).or_insert(0) += f;
            }
        }
    }
    CooccurrenceMatrix {
        vocabulary: o.vocabulary.clone(),
        rows: acc.into_iter().map(|r| r.into_iter().collect()).collect(),
    }
}

/// Dense low-dimensional concept vectors `C' = C R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedConcepts {
    pub vocabulary: Vocabulary,
    /// N × k, one row per concept.
    pub vectors: DMatrix<f64>,
    pub seed: u64,
}

impl ProjectedConcepts {
    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Gaussian random projection with entries `N(0, 1/k)`.
///
/// `R` is filled row-major from a ChaCha8 stream seeded with `seed`, so the
/// result depends only on `(C, k, seed)` and the vocabulary order.
pub fn random_projection(c: &CooccurrenceMatrix, k: usize, seed: u64) -> Result<ProjectedConcepts> {
    let n = c.len();
    if k == 0 || k >= n {
        return Err(Error::argument(format!(
            "projection dimension k={k} must satisfy 1 <= k < N={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("finite std dev");
    let r = DMatrix::from_row_iterator(n, k, (0..n * k).map(|_| normal.sample(&mut rng)));

    let mut vectors = DMatrix::zeros(n, k);
    for a in 0..n {
        for &(b, v) in c.row(a) {
            let v = v as f64;
            for j in 0..k {
                vectors[(a, j)] += v * r[(b, j)];
            }
        }
    }
    Ok(ProjectedConcepts {
        vocabulary: c.vocabulary.clone(),
        vectors,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worked_example;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn set(codes: &[&str]) -> BTreeSet<ConceptId> {
        codes.iter().map(|c| cid(c)).collect()
    }

    #[test]
    fn augmentation_matches_worked_example() {
        let h = worked_example::hierarchy();
        let corpus = worked_example::corpus();
        let aug = corpus.augment(&h, MissingConceptPolicy::Strict).unwrap();
        assert_eq!(aug.records[0].concepts, set(&["4289", "42823", "4282", "428"]));
        assert_eq!(aug.records[1].concepts, set(&["4289", "428"]));
        assert_eq!(aug.records[3].concepts, set(&["42820", "4282", "428"]));
        assert_eq!(aug.records[0].frequency, 10);

        let top = Record::new("t", [cid("428")], 1).unwrap();
        let top_aug = augment_record(&h, &top, MissingConceptPolicy::Strict).unwrap();
        assert_eq!(top_aug.concepts, set(&["428"]));
    }

    #[test]
    fn missing_concept_policy() {
        let h = worked_example::hierarchy();
        let r = Record::new("x", [cid("42823"), cid("99999")], 1).unwrap();
        let lenient = augment_record(&h, &r, MissingConceptPolicy::AttachToRoot).unwrap();
        assert_eq!(lenient.concepts, set(&["42823", "4282", "428", "99999"]));
        let err = augment_record(&h, &r, MissingConceptPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::InRecord { ref record, .. } if record == "x"));
    }

    #[test]
    fn single_record_single_concept() {
        let h = worked_example::hierarchy();
        let corpus = RecordCorpus::new(vec![Record::new("a", [cid("428")], 1).unwrap()]);
        let o = build_occurrence(&h, &corpus, MissingConceptPolicy::Strict).unwrap();
        assert_eq!(o.to_dense(), DMatrix::from_element(1, 1, 1u8));
        let c = build_cooccurrence(&o);
        assert_eq!(c.to_dense(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn empty_corpus_rejected() {
        let h = worked_example::hierarchy();
        let err = build_occurrence(&h, &RecordCorpus::default(), MissingConceptPolicy::Strict);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn duplicate_records_collapse_to_frequency() {
        let h = worked_example::hierarchy();
        let r = Record::new("a", [cid("4289"), cid("42820")], 1).unwrap();
        let mut r2 = r.clone();
        r2.id = "b".into();
        let split = RecordCorpus::new(vec![r.clone(), r2]);
        let merged = RecordCorpus::new(vec![Record { frequency: 2, ..r }]);
        assert_eq!(split.collapse_duplicates(), merged);

        let p = MissingConceptPolicy::Strict;
        let o_split = build_occurrence(&h, &split.collapse_duplicates(), p).unwrap();
        let o_merged = build_occurrence(&h, &merged, p).unwrap();
        assert_eq!(o_split, o_merged);
        let c_split = build_cooccurrence(&build_occurrence(&h, &split, p).unwrap());
        assert_eq!(c_split, build_cooccurrence(&o_merged));
    }

    #[test]
    fn records_reject_bad_input() {
        assert!(Record::new("e", Vec::<ConceptId>::new(), 1).is_err());
        assert!(Record::new("z", [cid("1")], 0).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_defaults() {
        let text = r#"{"id":"p1","codes":["42823","4289","4289"],"label":1,"cohort":"chf"}
{"id":"p2","codes":["42820"],"freq":3}
"#;
        let corpus = RecordCorpus::read_jsonl(text.as_bytes(), "r.jsonl").unwrap();
        assert_eq!(corpus.records[0].concepts.len(), 2);
        assert_eq!(corpus.records[0].frequency, 1);
        assert_eq!(corpus.records[0].label, Some(true));
        assert_eq!(corpus.records[1].frequency, 3);
        let mut out = Vec::new();
        corpus.write_jsonl(&mut out).unwrap();
        let again = RecordCorpus::read_jsonl(out.as_slice(), "x").unwrap();
        assert_eq!(again, corpus);

        let err = RecordCorpus::read_jsonl(r#"{"id":"a","codes":["1"],"label":2}"#.as_bytes(), "bad")
            .unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn cooccurrence_tsv_round_trip() {
        let c = worked_example::cooccurrence();
        let mut buf = Vec::new();
        c.write_tsv(&mut buf).unwrap();
        let again = CooccurrenceMatrix::read_tsv(buf.as_slice(), "c.tsv").unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn projection_rejects_bad_k_and_is_deterministic() {
        let c = worked_example::cooccurrence();
        assert!(random_projection(&c, 0, 1).is_err());
        assert!(random_projection(&c, 5, 1).is_err());
        let a = random_projection(&c, 3, 42).unwrap();
        let b = random_projection(&c, 3, 42).unwrap();
        assert_eq!(a.vectors.as_slice(), b.vectors.as_slice());
        assert_ne!(a, random_projection(&c, 3, 43).unwrap());
    }

    #[test]
    fn projection_of_zero_matrix_is_zero() {
        let vocab = Vocabulary::new(["a", "b", "c"].map(cid));
        let c = CooccurrenceMatrix::from_triplets(vocab, []).unwrap();
        let p = random_projection(&c, 2, 7).unwrap();
        assert!(p.vectors.iter().all(|&v| v == 0.0));
    }
}
