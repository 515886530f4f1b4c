//! Concept distances over co-occurrence rows and set-to-set record distances.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::corpus::{CooccurrenceMatrix, RecordCorpus};
use crate::error::{Error, Result};
use crate::hierarchy::{ConceptHierarchy, ConceptId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptDistanceKind {
    Cosine,
    Manhattan,
    Euclidean,
    Ehdn,
    WuPalmer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordDistanceKind {
    Sd1,
    Sd2,
    Sd3,
    Sd4,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl ::std::str::FromStr for $ty {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> ::std::result::Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err($crate::error::Error::argument(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}
pub(crate) use str_enum;

str_enum!(ConceptDistanceKind, "concept distance",
    "cosine" => ConceptDistanceKind::Cosine,
    "manhattan" => ConceptDistanceKind::Manhattan,
    "euclidean" => ConceptDistanceKind::Euclidean,
    "ehdn" => ConceptDistanceKind::Ehdn,
    "wu-palmer" => ConceptDistanceKind::WuPalmer,
);

str_enum!(RecordDistanceKind, "record distance",
    "sd1" => RecordDistanceKind::Sd1,
    "sd2" => RecordDistanceKind::Sd2,
    "sd3" => RecordDistanceKind::Sd3,
    "sd4" => RecordDistanceKind::Sd4,
);

/// The `N` used by the eHDN formula.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EhdnScale {
    /// Vocabulary size, exactly as the formula is usually printed.
    #[default]
    ConceptCount,
    /// A caller-supplied total, typically the expanded record count `Σ f_i`.
    Total(f64),
}

/// Anything that can report a dissimilarity between two concepts.
pub trait ConceptDissimilarity {
    fn cd(&self, a: &ConceptId, b: &ConceptId) -> Result<f64>;
}

impl<F> ConceptDissimilarity for F
where
    F: Fn(&ConceptId, &ConceptId) -> Result<f64>,
{
    fn cd(&self, a: &ConceptId, b: &ConceptId) -> Result<f64> {
        self(a, b)
    }
}

/// A concept distance of one kind bound to its data.
#[derive(Debug, Clone, Copy)]
pub struct ConceptMetric<'a> {
    pub kind: ConceptDistanceKind,
    pub cooccurrence: &'a CooccurrenceMatrix,
    pub hierarchy: Option<&'a ConceptHierarchy>,
    pub ehdn_scale: EhdnScale,
}

impl<'a> ConceptMetric<'a> {
    pub fn new(kind: ConceptDistanceKind, cooccurrence: &'a CooccurrenceMatrix) -> Self {
        ConceptMetric {
            kind,
            cooccurrence,
            hierarchy: None,
            ehdn_scale: EhdnScale::default(),
        }
    }

    pub fn with_hierarchy(mut self, h: &'a ConceptHierarchy) -> Self {
        self.hierarchy = Some(h);
        self
    }

    pub fn with_ehdn_scale(mut self, scale: EhdnScale) -> Self {
        self.ehdn_scale = scale;
        self
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        if self.kind == ConceptDistanceKind::WuPalmer {
            let h = self.hierarchy.ok_or_else(|| {
                Error::argument("the wu-palmer concept distance needs a hierarchy")
            })?;
            return h.wu_palmer_distance(a, b);
        }
        let vocab = self.cooccurrence.vocabulary();
        self.distance_by_index(vocab.index_of(a)?, vocab.index_of(b)?)
    }

    /// Distance between vocabulary positions `a` and `b` (not valid for Wu–Palmer).
    pub fn distance_by_index(&self, a: usize, b: usize) -> Result<f64> {
        let c = self.cooccurrence;
        let name = |i: usize| c.vocabulary().get(i).to_string();
        match self.kind {
            ConceptDistanceKind::Cosine => {
                let na = row_norm(c.row(a));
                let nb = row_norm(c.row(b));
                if na == 0.0 {
                    return Err(Error::Degenerate(format!("concept `{}` has an all-zero row", name(a))));
                }
                if nb == 0.0 {
                    return Err(Error::Degenerate(format!("concept `{}` has an all-zero row", name(b))));
                }
                if a == b {
                    return Ok(0.0);
                }
                Ok((1.0 - row_dot(c.row(a), c.row(b)) / (na * nb)).max(0.0))
            }
            ConceptDistanceKind::Manhattan => {
                Ok(merge_rows(c.row(a), c.row(b)).map(|(x, y)| (x - y).abs()).sum())
            }
            ConceptDistanceKind::Euclidean => Ok(merge_rows(c.row(a), c.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()),
            ConceptDistanceKind::Ehdn => {
                let n = match self.ehdn_scale {
                    EhdnScale::ConceptCount => c.len() as f64,
                    EhdnScale::Total(t) => t,
                };
                let sa = c.row_sum(a) as f64;
                let sb = c.row_sum(b) as f64;
                let fa = sa * (n - sa);
                let fb = sb * (n - sb);
                let denom = fa * fb;
                if !(denom > 0.0) {
                    let culprit = if fa > 0.0 { b } else { a };
                    return Err(Error::Degenerate(format!(
                        "eHDN denominator is not positive for concept `{}` (row sum {}, N {n})",
                        name(culprit),
                        c.row_sum(culprit)
                    )));
                }
                let cab = c.get(a, b) as f64;
                Ok(1.0 - (cab * n - sa * sb) / denom.sqrt())
            }
            ConceptDistanceKind::WuPalmer => Err(Error::argument(
                "wu-palmer distance is defined on codes, not vocabulary positions",
            )),
        }
    }
}

impl ConceptDissimilarity for ConceptMetric<'_> {
    fn cd(&self, a: &ConceptId, b: &ConceptId) -> Result<f64> {
        self.distance(a.as_str(), b.as_str())
    }
}

/// One-shot concept distance without a hierarchy.
pub fn concept_distance(kind: ConceptDistanceKind, c: &CooccurrenceMatrix, a: &str, b: &str) -> Result<f64> {
    ConceptMetric::new(kind, c).distance(a, b)
}

fn merge_rows<'r>(
    a: &'r [(usize, u64)],
    b: &'r [(usize, u64)],
) -> impl Iterator<Item = (f64, f64)> + 'r {
    let (mut i, mut j) = (0, 0);
    std::iter::from_fn(move || {
        let out = match (a.get(i), b.get(j)) {
            (None, None) => return None,
            (Some(&(ka, va)), Some(&(kb, vb))) if ka == kb => {
                i += 1;
                j += 1;
                (va as f64, vb as f64)
            }
            (Some(&(ka, va)), Some(&(kb, _))) if ka < kb => {
                i += 1;
                (va as f64, 0.0)
            }
            (Some(&(_, va)), None) => {
                i += 1;
                (va as f64, 0.0)
            }
            (_, Some(&(_, vb))) => {
                j += 1;
                (0.0, vb as f64)
            }
        };
        Some(out)
    })
}

fn row_dot(a: &[(usize, u64)], b: &[(usize, u64)]) -> f64 {
    merge_rows(a, b).map(|(x, y)| x * y).sum()
}

fn row_norm(a: &[(usize, u64)]) -> f64 {
    a.iter().map(|&(_, v)| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Precomputed concept distances over a fixed concept subset.
#[derive(Debug, Clone)]
pub struct ConceptDistanceTable {
    index: HashMap<ConceptId, usize>,
    ids: Vec<ConceptId>,
    values: Vec<f64>,
}

impl ConceptDistanceTable {
    /// Evaluates `metric` on every pair of `concepts` (deduplicated, sorted).
    pub fn build<D>(metric: &D, concepts: impl IntoIterator<Item = ConceptId>) -> Result<Self>
    where
        D: ConceptDissimilarity + Sync,
    {
        let ids: Vec<ConceptId> = concepts.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let n = ids.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| metric.cd(&ids[i], &ids[j])).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        let index = ids.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        Ok(ConceptDistanceTable { index, ids, values })
    }

    /// Table over every concept used by `corpus`.
    pub fn for_corpus<D>(metric: &D, corpus: &RecordCorpus) -> Result<Self>
    where
        D: ConceptDissimilarity + Sync,
    {
        Self::build(metric, corpus.records.iter().flat_map(|r| r.concepts.iter().cloned()))
    }

    pub fn ids(&self) -> &[ConceptId] {
        &self.ids
    }

    pub fn to_distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix {
            ids: self.ids.iter().map(|c| c.to_string()).collect(),
            values: self.values.clone(),
        }
    }
}

impl ConceptDissimilarity for ConceptDistanceTable {
    fn cd(&self, a: &ConceptId, b: &ConceptId) -> Result<f64> {
        let i = *self.index.get(a).ok_or_else(|| Error::UnknownConcept(a.to_string()))?;
        let j = *self.index.get(b).ok_or_else(|| Error::UnknownConcept(b.to_string()))?;
        Ok(self.values[i * self.ids.len() + j])
    }
}

/// Set-to-set distance between two concept sets.
///
/// The pair is put in a canonical order before evaluation so that
/// `record_distance(k, cd, a, b) == record_distance(k, cd, b, a)` bit for bit
/// whenever `cd` itself is symmetric.
pub fn record_distance<D>(
    kind: RecordDistanceKind,
    cd: &D,
    vi: &BTreeSet<ConceptId>,
    vj: &BTreeSet<ConceptId>,
) -> Result<f64>
where
    D: ConceptDissimilarity + ?Sized,
{
    if vi.is_empty() || vj.is_empty() {
        return Err(Error::argument("record distance needs two non-empty concept sets"));
    }
    let (vi, vj) = if (vi.len(), vi) <= (vj.len(), vj) { (vi, vj) } else { (vj, vi) };
    let a: Vec<&ConceptId> = vi.iter().collect();
    let b: Vec<&ConceptId> = vj.iter().collect();
    let mut costs = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            costs[(i, j)] = cd.cd(x, y)?;
        }
    }
    let (ni, nj) = (a.len() as f64, b.len() as f64);
    let value = match kind {
        RecordDistanceKind::Sd1 => {
            let rows: f64 = costs.row_iter().map(|r| r.min()).sum();
            let cols: f64 = costs.column_iter().map(|c| c.min()).sum();
            (rows + cols) / (ni + nj)
        }
        RecordDistanceKind::Sd2 => {
            let union = vi.union(vj).count() as f64;
            let only_i: f64 = (0..a.len())
                .filter(|&i| !vj.contains(a[i]))
                .map(|i| costs.row(i).sum() / nj)
                .sum();
            let only_j: f64 = (0..b.len())
                .filter(|&j| !vi.contains(b[j]))
                .map(|j| costs.column(j).sum() / ni)
                .sum();
            (only_i + only_j) / union
        }
        RecordDistanceKind::Sd3 => costs.sum() / (ni * nj),
        RecordDistanceKind::Sd4 => {
            let (pairs, total) = min_cost_assignment(&costs);
            total / pairs.len() as f64
        }
    };
    Ok(value)
}

/// Dense symmetric item × item distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full row-major matrix; symmetry is checked exactly and the diagonal zeroed.
    pub fn from_values(ids: Vec<String>, mut values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::argument(format!(
                "{} values do not form a {n}x{n} matrix",
                values.len()
            )));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in 0..i {
                let (x, y) = (values[i * n + j], values[j * n + i]);
                if x != y {
                    return Err(Error::argument(format!(
                        "distance matrix not symmetric at ({}, {}): {x} vs {y}",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        Ok(DistanceMatrix { ids, values })
    }

    /// Fills the upper triangle with `f(i, j)` and mirrors it.
    pub fn from_fn(ids: Vec<String>, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = ids.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        DistanceMatrix { ids, values }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_row_slice(n, n, &self.values)
    }

    /// Header row `id<TAB>id_1…`, then one row per item; values `%.6f`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "id")?;
        for id in &self.ids {
            write!(w, "\t{id}")?;
        }
        writeln!(w)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(i) {
                write!(w, "\t{v:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Upper-triangle pair list `id_i<TAB>id_j<TAB>distance`.
    pub fn write_pairs<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                writeln!(w, "{}\t{}\t{:.6}", self.ids[i], self.ids[j], self.get(i, j))?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::io(source_name, e))?,
            None => return Err(Error::format(source_name, 1, "missing header row")),
        };
        let mut cols = header.split('\t');
        if cols.next() != Some("id") {
            return Err(Error::format(source_name, 1, "header must start with `id`"));
        }
        let ids: Vec<String> = cols.map(str::to_string).collect();
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        let mut row = 0;
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(source_name, i + 1, m);
            let mut f = line.split('\t');
            let id = f.next().unwrap_or_default();
            if row >= n || id != ids[row] {
                return Err(bad(format!("unexpected row `{id}`")));
            }
            let parsed = f
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if parsed.len() != n {
                return Err(bad(format!("expected {n} values, found {}", parsed.len())));
            }
            values.extend(parsed);
            row += 1;
        }
        if row != n {
            return Err(Error::format(source_name, row + 2, format!("expected {n} rows, found {row}")));
        }
        Self::from_values(ids, values)
    }
}

/// All record-pair distances; rows are computed in parallel, output is order-independent.
pub fn pairwise_record_distances<D>(
    kind: RecordDistanceKind,
    cd: &D,
    corpus: &RecordCorpus,
) -> Result<DistanceMatrix>
where
    D: ConceptDissimilarity + Sync + ?Sized,
{
    let recs = &corpus.records;
    let n = recs.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    record_distance(kind, cd, &recs[i].concepts, &recs[j].concepts).map_err(|e| {
                        Error::in_record(format!("{}/{}", recs[i].id, recs[j].id), e)
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix {
        ids: corpus.ids(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_cooccurrence, OccurrenceMatrix, Record, Vocabulary};
    use crate::worked_example;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn set(codes: &[&str]) -> BTreeSet<ConceptId> {
        codes.iter().map(|c| cid(c)).collect()
    }

    #[test]
    fn cosine_worked_example() {
        let c = worked_example::cooccurrence();
        let d = |a, b| concept_distance(ConceptDistanceKind::Cosine, &c, a, b).unwrap();
        assert!((d("4289", "42823") - 0.0458).abs() < 5e-5);
        assert!((d("42823", "4282") - 0.0125).abs() < 5e-5);
        assert!((d("42820", "4282") - 0.2463).abs() < 5e-5);
        assert!((d("4289", "42820") - 0.4250).abs() < 5e-5);
        assert!(d("42823", "4282") < d("42820", "4282"));
        for k in [
            ConceptDistanceKind::Cosine,
            ConceptDistanceKind::Manhattan,
            ConceptDistanceKind::Euclidean,
        ] {
            assert_eq!(concept_distance(k, &c, "428", "428").unwrap(), 0.0);
        }
    }

    #[test]
    fn manhattan_and_euclidean_by_hand() {
        // Rows 4289 = (12,10,12,10,0) and 42820 = (0,0,5,5,5) in table order.
        let c = worked_example::cooccurrence();
        let m = concept_distance(ConceptDistanceKind::Manhattan, &c, "4289", "42820").unwrap();
        assert_eq!(m, 12.0 + 10.0 + 7.0 + 5.0 + 5.0);
        let e = concept_distance(ConceptDistanceKind::Euclidean, &c, "4289", "42820").unwrap();
        assert!((e - (144.0f64 + 100.0 + 49.0 + 25.0 + 25.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ehdn_literal_formula() {
        let c = worked_example::cooccurrence();
        // Row sums: 4289 -> 44, 42823 -> 70, N = 5; both factors negative so the product is positive.
        let (sa, sb, n, cab) = (44.0f64, 70.0f64, 5.0f64, 10.0f64);
        let want = 1.0 - (cab * n - sa * sb) / (sa * sb * (n - sa) * (n - sb)).sqrt();
        let got = concept_distance(ConceptDistanceKind::Ehdn, &c, "4289", "42823").unwrap();
        assert!((got - want).abs() < 1e-12);

        // With N = 50, row 4289 (44) gives a positive factor and 42823 (70) a negative one.
        let metric = ConceptMetric::new(ConceptDistanceKind::Ehdn, &c).with_ehdn_scale(EhdnScale::Total(50.0));
        let err = metric.distance("4289", "42823").unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref m) if m.contains("42823")), "{err}");
    }

    #[test]
    fn cosine_zero_row_is_degenerate() {
        let vocab = Vocabulary::new([cid("a"), cid("b")]);
        let c = CooccurrenceMatrix::from_triplets(vocab, [(0, 0, 3)]).unwrap();
        let err = concept_distance(ConceptDistanceKind::Cosine, &c, "a", "b").unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref m) if m.contains("`b`")));
    }

    #[test]
    fn wu_palmer_needs_hierarchy() {
        let c = worked_example::cooccurrence();
        let h = worked_example::hierarchy();
        assert!(concept_distance(ConceptDistanceKind::WuPalmer, &c, "4282", "42823").is_err());
        let m = ConceptMetric::new(ConceptDistanceKind::WuPalmer, &c).with_hierarchy(&h);
        assert!((m.distance("4282", "42823").unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sd1_worked_example() {
        let c = worked_example::cooccurrence();
        let m = ConceptMetric::new(ConceptDistanceKind::Cosine, &c);
        let v = record_distance(RecordDistanceKind::Sd1, &m, &set(&["4289", "42823"]), &set(&["4289"])).unwrap();
        assert!((v - 0.0153).abs() < 5e-5, "{v}");
        // Exactly CD(4289, 42823) / 3.
        assert!((v - m.distance("4289", "42823").unwrap() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sd_on_identical_sets() {
        let c = worked_example::cooccurrence();
        let m = ConceptMetric::new(ConceptDistanceKind::Cosine, &c);
        let v = set(&["4289", "42823", "428"]);
        for kind in [RecordDistanceKind::Sd1, RecordDistanceKind::Sd2, RecordDistanceKind::Sd4] {
            assert_eq!(record_distance(kind, &m, &v, &v).unwrap(), 0.0, "{kind}");
        }
        // SD3 is the mean of all within-set pairs, zero only for singletons.
        let mut sum = 0.0;
        for a in &v {
            for b in &v {
                sum += m.cd(a, b).unwrap();
            }
        }
        let sd3 = record_distance(RecordDistanceKind::Sd3, &m, &v, &v).unwrap();
        assert!((sd3 - sum / 9.0).abs() < 1e-15);
        let single = set(&["428"]);
        assert_eq!(record_distance(RecordDistanceKind::Sd3, &m, &single, &single).unwrap(), 0.0);
    }

    #[test]
    fn sd2_by_hand() {
        // Toy distances: CD(x, y) = |x - y| / 10 on integer codes.
        let cd = |a: &ConceptId, b: &ConceptId| -> Result<f64> {
            let (x, y): (f64, f64) = (a.as_str().parse().unwrap(), b.as_str().parse().unwrap());
            Ok((x - y).abs() / 10.0)
        };
        let vi = set(&["1", "2"]);
        let vj = set(&["2", "5"]);
        // Vi\Vj = {1}: mean(CD(1,2), CD(1,5)) = (0.1 + 0.4)/2 = 0.25.
        // Vj\Vi = {5}: mean(CD(5,1), CD(5,2)) = (0.4 + 0.3)/2 = 0.35.
        // Union size 3.
        let v = record_distance(RecordDistanceKind::Sd2, &cd, &vi, &vj).unwrap();
        assert!((v - 0.6 / 3.0).abs() < 1e-15);
        let sd4 = record_distance(RecordDistanceKind::Sd4, &cd, &vi, &vj).unwrap();
        // Best matching {1-2, 2-5} = 0.1 + 0.3 vs {1-5, 2-2} = 0.4 + 0: both 0.4.
        assert!((sd4 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_sets_rejected() {
        let cd = |_: &ConceptId, _: &ConceptId| -> Result<f64> { Ok(0.0) };
        let err = record_distance(RecordDistanceKind::Sd1, &cd, &BTreeSet::new(), &set(&["1"]));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn pairwise_matrix_on_worked_example() {
        let c = worked_example::cooccurrence();
        let m = ConceptMetric::new(ConceptDistanceKind::Cosine, &c);
        let corpus = worked_example::corpus();
        let table = ConceptDistanceTable::for_corpus(&m, &corpus).unwrap();
        let dm = pairwise_record_distances(RecordDistanceKind::Sd1, &table, &corpus).unwrap();
        assert_eq!(dm.len(), 4);
        assert!((dm.get(0, 1) - 0.0153).abs() < 5e-5);
        assert_eq!(dm.get(0, 1), dm.get(1, 0));
        assert_eq!(dm.get(2, 2), 0.0);
        let direct = pairwise_record_distances(RecordDistanceKind::Sd1, &m, &corpus).unwrap();
        assert_eq!(direct, dm);
    }

    #[test]
    fn identical_records_give_zero_matrix() {
        let r = Record::new("a", [cid("42823"), cid("4289")], 1).unwrap();
        let corpus = RecordCorpus::new(
            (0..4)
                .map(|i| Record { id: format!("r{i}"), ..r.clone() })
                .collect(),
        );
        let c = build_cooccurrence(&OccurrenceMatrix::from_augmented(&corpus).unwrap());
        let m = ConceptMetric::new(ConceptDistanceKind::Cosine, &c);
        let dm = pairwise_record_distances(RecordDistanceKind::Sd1, &m, &corpus).unwrap();
        assert!(dm.to_dmatrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_matrix_tsv_round_trip() {
        let dm = DistanceMatrix::from_fn(vec!["a".into(), "b".into(), "c".into()], |i, j| (i + 2 * j) as f64 / 8.0);
        let mut buf = Vec::new();
        dm.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id\ta\tb\tc\na\t0.000000\t0.250000"));
        assert_eq!(DistanceMatrix::read_tsv(buf.as_slice(), "d").unwrap(), dm);

        let mut pairs = Vec::new();
        dm.write_pairs(&mut pairs).unwrap();
        assert_eq!(String::from_utf8(pairs).unwrap().lines().count(), 3);
    }

    #[test]
    fn kinds_parse_and_print() {
        assert_eq!("SD4".parse::<RecordDistanceKind>().unwrap(), RecordDistanceKind::Sd4);
        assert_eq!("wu-palmer".parse::<ConceptDistanceKind>().unwrap().to_string(), "wu-palmer");
        assert!("jaccard".parse::<ConceptDistanceKind>().is_err());
    }
}
