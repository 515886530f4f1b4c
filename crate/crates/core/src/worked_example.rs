//! The four-record heart-failure example (codes 428, 4282, 4289, 42820, 42823)
//! with its published intermediate tables, used as a golden fixture and by
//! the `demo-figure3` command.

use std::fmt::Write as _;

use crate::corpus::{build_cooccurrence, build_occurrence, CooccurrenceMatrix, Record, RecordCorpus};
use crate::distances::{record_distance, ConceptDistanceKind, ConceptMetric, RecordDistanceKind};
use crate::error::Result;
use crate::hierarchy::{ConceptHierarchy, ConceptId, MissingConceptPolicy};

/// Column order used by the published tables.
pub const TABLE_ORDER: [&str; 5] = ["4289", "42823", "428", "4282", "42820"];

pub const RECORDS: [(&str, &[&str], u64); 4] = [
    ("V1", &["4289", "42823"], 10),
    ("V2", &["4289"], 2),
    ("V3", &["42823"], 10),
    ("V4", &["42820"], 5),
];

/// Augmented concept sets, published alongside each record.
pub const AUGMENTED: [&[&str]; 4] = [
    &["4289", "42823", "4282", "428"],
    &["4289", "428"],
    &["42823", "4282", "428"],
    &["42820", "4282", "428"],
];

/// Occurrence matrix in [`TABLE_ORDER`] columns.
pub const OCCURRENCE: [[u8; 5]; 4] = [
    [1, 1, 1, 1, 0],
    [1, 0, 1, 0, 0],
    [0, 1, 1, 1, 0],
    [0, 0, 1, 1, 1],
];

pub const COOCCURRENCE: [[u64; 5]; 5] = [
    [12, 10, 12, 10, 0],
    [10, 20, 20, 20, 0],
    [12, 20, 27, 25, 5],
    [10, 20, 25, 25, 5],
    [0, 0, 5, 5, 5],
];

/// Cosine concept distances as printed (4 decimals).
pub const COSINE: [[f64; 5]; 5] = [
    [0.0, 0.0458, 0.0523, 0.0652, 0.4250],
    [0.0458, 0.0, 0.0133, 0.0125, 0.3595],
    [0.0523, 0.0133, 0.0, 0.0014, 0.2495],
    [0.0652, 0.0125, 0.0014, 0.0, 0.2463],
    [0.4250, 0.3595, 0.2495, 0.2463, 0.0],
];

/// Record distance SD1(V1, V2) under cosine concept distances, as printed.
pub const SD1_V1_V2: f64 = 0.0153;

/// Agreement threshold for 4-decimal printed values: one unit in the last place.
pub const PRINTED_TOLERANCE: f64 = 1e-4;

fn cid(s: &str) -> ConceptId {
    ConceptId::new(s).expect("fixture codes are valid")
}

pub fn hierarchy() -> ConceptHierarchy {
    ConceptHierarchy::from_edges(
        [("4282", "428"), ("42823", "4282"), ("42820", "4282"), ("4289", "428")]
            .map(|(c, p)| (cid(c), cid(p))),
    )
    .expect("fixture hierarchy is a tree")
}

pub fn corpus() -> RecordCorpus {
    RecordCorpus::new(
        RECORDS
            .iter()
            .map(|(id, codes, f)| Record::new(*id, codes.iter().map(|c| cid(c)), *f).unwrap())
            .collect(),
    )
}

pub fn cooccurrence() -> CooccurrenceMatrix {
    let o = build_occurrence(&hierarchy(), &corpus(), MissingConceptPolicy::Strict)
        .expect("fixture corpus resolves");
    build_cooccurrence(&o)
}

/// Outcome of recomputing the example from scratch.
#[derive(Debug, Clone)]
pub struct DemoReport {
    pub cooccurrence: [[u64; 5]; 5],
    pub cosine: [[f64; 5]; 5],
    pub sd1_v1_v2: f64,
    pub augmented_ok: bool,
    pub occurrence_ok: bool,
    pub cooccurrence_ok: bool,
    /// Entries of the cosine table farther than [`PRINTED_TOLERANCE`] from the print.
    pub cosine_mismatches: Vec<(usize, usize)>,
    pub sd1_ok: bool,
}

impl DemoReport {
    pub fn all_match(&self) -> bool {
        self.augmented_ok
            && self.occurrence_ok
            && self.cooccurrence_ok
            && self.cosine_mismatches.is_empty()
            && self.sd1_ok
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let header = |s: &mut String| {
            let _ = write!(s, "{:>7}", "");
            for c in TABLE_ORDER {
                let _ = write!(s, "{c:>8}");
            }
            s.push('\n');
        };
        s.push_str("co-occurrence matrix C\n");
        header(&mut s);
        for (i, row) in self.cooccurrence.iter().enumerate() {
            let _ = write!(s, "{:>7}", TABLE_ORDER[i]);
            for v in row {
                let _ = write!(s, "{v:>8}");
            }
            s.push('\n');
        }
        s.push_str("\ncosine concept distances\n");
        header(&mut s);
        for (i, row) in self.cosine.iter().enumerate() {
            let _ = write!(s, "{:>7}", TABLE_ORDER[i]);
            for v in row {
                let _ = write!(s, "{v:>8.4}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nSD_1(V1,V2) = {:.4}", self.sd1_v1_v2);
        let flag = |ok: bool| if ok { "ok" } else { "MISMATCH" };
        let _ = writeln!(s, "augmented records: {}", flag(self.augmented_ok));
        let _ = writeln!(s, "occurrence matrix: {}", flag(self.occurrence_ok));
        let _ = writeln!(s, "co-occurrence matrix: {}", flag(self.cooccurrence_ok));
        let _ = writeln!(
            s,
            "cosine table: {}",
            flag(self.cosine_mismatches.is_empty())
        );
        let _ = writeln!(s, "SD_1(V1,V2): {}", flag(self.sd1_ok));
        s
    }
}

pub fn run_demo() -> Result<DemoReport> {
    let h = hierarchy();
    let raw = corpus();
    let augmented = raw.augment(&h, MissingConceptPolicy::Strict)?;
    let augmented_ok = augmented
        .records
        .iter()
        .zip(AUGMENTED)
        .all(|(r, want)| r.concepts == want.iter().map(|c| cid(c)).collect());

    let o = build_occurrence(&h, &raw, MissingConceptPolicy::Strict)?;
    let col = |c: &str| o.vocabulary.index_of(c);
    let mut occurrence_ok = o.frequencies == [10, 2, 10, 5];
    for (i, row) in OCCURRENCE.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            let have = u8::from(o.rows[i].contains(&col(TABLE_ORDER[j])?));
            occurrence_ok &= have == want;
        }
    }

    let c = build_cooccurrence(&o);
    let metric = ConceptMetric::new(ConceptDistanceKind::Cosine, &c);
    let mut cooc = [[0u64; 5]; 5];
    let mut cosine = [[0f64; 5]; 5];
    let mut cosine_mismatches = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            cooc[i][j] = c.get_by_id(TABLE_ORDER[i], TABLE_ORDER[j])?;
            cosine[i][j] = metric.distance(TABLE_ORDER[i], TABLE_ORDER[j])?;
            if (cosine[i][j] - COSINE[i][j]).abs() >= PRINTED_TOLERANCE {
                cosine_mismatches.push((i, j));
            }
        }
    }

    let sd1 = record_distance(
        RecordDistanceKind::Sd1,
        &metric,
        &raw.records[0].concepts,
        &raw.records[1].concepts,
    )?;

    Ok(DemoReport {
        cooccurrence: cooc,
        cosine,
        sd1_v1_v2: sd1,
        augmented_ok,
        occurrence_ok,
        cooccurrence_ok: cooc == COOCCURRENCE,
        cosine_mismatches,
        sd1_ok: (sd1 - SD1_V1_V2).abs() < PRINTED_TOLERANCE,
    })
}
