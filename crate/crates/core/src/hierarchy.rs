//! Concept hierarchy: a rooted is-a tree over concept codes.
//!
//! Input is a generic `child -> parent` edge list, so ICD-9 digit refinement,
//! CCS multi-level groupings and UMLS-derived trees all load the same way.
//! Every parentless node hangs off one synthetic virtual root at depth 0.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parent token that names the virtual root explicitly in edge lists.
pub const VIRTUAL_ROOT: &str = "ROOT";

/// A concept code such as an ICD-9 diagnosis (`42823`) or a CCS category.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::argument("concept id must not be empty"));
        }
        if code.chars().any(char::is_whitespace) {
            return Err(Error::argument(format!(
                "concept id `{code}` contains whitespace"
            )));
        }
        Ok(ConceptId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConceptId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        ConceptId::new(value)
    }
}

impl TryFrom<&str> for ConceptId {
    type Error = Error;
    fn try_from(value: &str) -> Result<Self> {
        ConceptId::new(value)
    }
}

impl From<ConceptId> for String {
    fn from(value: ConceptId) -> Self {
        value.0
    }
}

impl Borrow<str> for ConceptId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for ConceptId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What to do with record concepts that the hierarchy does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingConceptPolicy {
    /// Treat the concept as a leaf directly under the virtual root and log a warning.
    #[default]
    AttachToRoot,
    Strict,
}

/// Immutable concept tree. Node order is lexicographic by code.
#[derive(Debug, Clone)]
pub struct ConceptHierarchy {
    ids: Vec<ConceptId>,
    index: HashMap<ConceptId, usize>,
    /// `None` means the node is a child of the virtual root.
    parent: Vec<Option<usize>>,
    depth: Vec<u32>,
    children: Vec<Vec<usize>>,
}

impl ConceptHierarchy {
    /// Builds and validates the tree from `(child, parent)` edges.
    ///
    /// A parent equal to [`VIRTUAL_ROOT`] attaches the child to the virtual root.
    /// Repeating an identical edge is allowed; a child with two different
    /// parents or any cycle is a structural error.
    pub fn from_edges<I>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ConceptId, ConceptId)>,
    {
        let mut parent_of: BTreeMap<ConceptId, Option<ConceptId>> = BTreeMap::new();
        let mut seen_edge = false;
        for (child, parent) in edges {
            seen_edge = true;
            if child.as_str() == VIRTUAL_ROOT {
                return Err(Error::Structure(format!(
                    "`{VIRTUAL_ROOT}` is reserved for the virtual root and cannot be a child"
                )));
            }
            let parent = (parent.as_str() != VIRTUAL_ROOT).then_some(parent);
            if let Some(p) = &parent {
                parent_of.entry(p.clone()).or_insert(None);
            }
            match parent_of.get_mut(&child) {
                Some(slot @ None) => *slot = parent,
                Some(Some(existing)) => {
                    if parent.as_ref() != Some(existing) {
                        return Err(Error::Structure(format!(
                            "concept `{child}` has conflicting parents `{existing}` and `{}`",
                            parent.map(|p| p.0).unwrap_or_else(|| VIRTUAL_ROOT.to_string())
                        )));
                    }
                }
                None => {
                    parent_of.insert(child, parent);
                }
            }
        }
        if !seen_edge {
            return Err(Error::argument("hierarchy edge list is empty"));
        }
        Self::from_parent_map(parent_of)
    }

    fn from_parent_map(parent_of: BTreeMap<ConceptId, Option<ConceptId>>) -> Result<Self> {
        let ids: Vec<ConceptId> = parent_of.keys().cloned().collect();
        let index: HashMap<ConceptId, usize> =
            ids.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        let parent: Vec<Option<usize>> = parent_of
            .values()
            .map(|p| p.as_ref().map(|p| index[p]))
            .collect();

        // 0 = unvisited, 1 = on the current walk, 2 = resolved.
        let mut state = vec![0u8; ids.len()];
        let mut depth = vec![0u32; ids.len()];
        for start in 0..ids.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            let mut base = 0u32;
            while let Some(node) = cur {
                match state[node] {
                    2 => {
                        base = depth[node];
                        break;
                    }
                    1 => {
                        return Err(Error::Structure(format!(
                            "cycle detected through concept `{}`",
                            ids[node]
                        )))
                    }
                    _ => {
                        state[node] = 1;
                        path.push(node);
                        cur = parent[node];
                    }
                }
            }
            for node in path.into_iter().rev() {
                base += 1;
                depth[node] = base;
                state[node] = 2;
            }
        }

        let mut children = vec![Vec::new(); ids.len()];
        for (child, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(child);
            }
        }

        Ok(ConceptHierarchy {
            ids,
            index,
            parent,
            depth,
            children,
        })
    }

    /// Returns a copy with `concepts` not already present attached as leaves of the virtual root.
    pub fn with_orphans<'a, I>(&self, concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ConceptId>,
    {
        let mut parent_of: BTreeMap<ConceptId, Option<ConceptId>> = self
            .ids
            .iter()
            .zip(&self.parent)
            .map(|(c, p)| (c.clone(), p.map(|p| self.ids[p].clone())))
            .collect();
        for c in concepts {
            if !parent_of.contains_key(c) {
                log::warn!("concept `{c}` is not in the hierarchy; attaching it under the root");
                parent_of.insert(c.clone(), None);
            }
        }
        Self::from_parent_map(parent_of)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, c: &str) -> bool {
        self.index.contains_key(c)
    }

    /// Concept codes in lexicographic order (virtual root excluded).
    pub fn concepts(&self) -> &[ConceptId] {
        &self.ids
    }

    fn node(&self, c: &str) -> Result<usize> {
        self.index
            .get(c)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(c.to_string()))
    }

    /// Parent of `c`, or `None` when `c` hangs off the virtual root.
    pub fn parent(&self, c: &str) -> Result<Option<&ConceptId>> {
        Ok(self.parent[self.node(c)?].map(|p| &self.ids[p]))
    }

    pub fn depth(&self, c: &str) -> Result<u32> {
        Ok(self.depth[self.node(c)?])
    }

    pub fn children(&self, c: &str) -> Result<Vec<&ConceptId>> {
        Ok(self.children[self.node(c)?]
            .iter()
            .map(|&i| &self.ids[i])
            .collect())
    }

    pub fn is_leaf(&self, c: &str) -> Result<bool> {
        Ok(self.children[self.node(c)?].is_empty())
    }

    pub fn leaves(&self) -> Vec<&ConceptId> {
        (0..self.ids.len())
            .filter(|&i| self.children[i].is_empty())
            .map(|i| &self.ids[i])
            .collect()
    }

    /// Leaf descendants of `c`, lexicographic. A leaf is its own only leaf descendant.
    pub fn leaf_descendants(&self, c: &str) -> Result<Vec<&ConceptId>> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self.node(c)?];
        while let Some(n) = stack.pop() {
            if self.children[n].is_empty() {
                out.insert(&self.ids[n]);
            } else {
                stack.extend(&self.children[n]);
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Proper ancestors of `c`, nearest first, excluding the virtual root.
    pub fn ancestors(&self, c: &str) -> Result<Vec<&ConceptId>> {
        let mut out = Vec::new();
        let mut cur = self.parent[self.node(c)?];
        while let Some(p) = cur {
            out.push(&self.ids[p]);
            cur = self.parent[p];
        }
        Ok(out)
    }

    /// Deepest common ancestor-or-self of `a` and `b`; `None` is the virtual root.
    pub fn lowest_common_ancestor(&self, a: &str, b: &str) -> Result<Option<&ConceptId>> {
        let (mut x, mut y) = (Some(self.node(a)?), Some(self.node(b)?));
        let d = |n: Option<usize>| n.map_or(0, |n| self.depth[n]);
        while d(x) > d(y) {
            x = x.and_then(|n| self.parent[n]);
        }
        while d(y) > d(x) {
            y = y.and_then(|n| self.parent[n]);
        }
        while x != y {
            x = x.and_then(|n| self.parent[n]);
            y = y.and_then(|n| self.parent[n]);
        }
        Ok(x.map(|n| &self.ids[n]))
    }

    /// Wu–Palmer distance `1 - 2 depth(lcs) / (depth(a) + depth(b))`.
    pub fn wu_palmer_distance(&self, a: &str, b: &str) -> Result<f64> {
        let lcs_depth = match self.lowest_common_ancestor(a, b)? {
            Some(l) => self.depth[self.index[l.as_str()]],
            None => 0,
        };
        let sum = self.depth(a)? + self.depth(b)?;
        Ok(1.0 - 2.0 * f64::from(lcs_depth) / f64::from(sum))
    }

    /// Every node as a `(child, parent)` edge, top-level nodes pointing at [`VIRTUAL_ROOT`].
    pub fn edges(&self) -> impl Iterator<Item = (&ConceptId, &str)> + '_ {
        self.ids.iter().zip(&self.parent).map(move |(c, p)| {
            let p = match p {
                Some(p) => self.ids[*p].as_str(),
                None => VIRTUAL_ROOT,
            };
            (c, p)
        })
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (c, p) in self.edges() {
            writeln!(w, "{c}\t{p}")?;
        }
        Ok(())
    }
}

/// ICD-9 style prefix edges: 5-character codes hang under their 4-character
/// prefix, 4-character codes under their 3-character prefix.
///
/// Prefix nodes are materialized even when they are absent from `codes`.
pub fn infer_icd9_edges(codes: &[ConceptId]) -> Result<Vec<(ConceptId, ConceptId)>> {
    let mut edges = BTreeSet::new();
    for code in codes {
        let chars: Vec<char> = code.as_str().chars().collect();
        if chars.len() < 3 || chars.len() > 5 {
            return Err(Error::argument(format!(
                "ICD-9 code `{code}` must have 3 to 5 characters"
            )));
        }
        let prefix = |n: usize| ConceptId(chars[..n].iter().collect());
        let mut child = code.clone();
        for n in (3..chars.len()).rev() {
            let parent = prefix(n);
            edges.insert((child, parent.clone()));
            child = parent;
        }
    }
    Ok(edges.into_iter().collect())
}

/// Reads `child<TAB>parent` lines. Blank lines and `#` comments are skipped.
pub fn read_edges_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<(ConceptId, ConceptId)>> {
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::format(
                source_name,
                i + 1,
                format!("expected `child<TAB>parent`, found {} field(s)", fields.len()),
            ));
        }
        let parse = |s: &str| ConceptId::new(s).map_err(|e| Error::format(source_name, i + 1, e.to_string()));
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn tree(edges: &[(&str, &str)]) -> Result<ConceptHierarchy> {
        ConceptHierarchy::from_edges(edges.iter().map(|(c, p)| (cid(c), cid(p))))
    }

    fn heart_failure() -> ConceptHierarchy {
        tree(&[
            ("4282", "428"),
            ("42823", "4282"),
            ("42820", "4282"),
            ("4289", "428"),
        ])
        .unwrap()
    }

    #[test]
    fn depths_follow_prefix_path() {
        let h = heart_failure();
        assert_eq!(h.depth("428").unwrap(), 1);
        assert_eq!(h.depth("4282").unwrap(), 2);
        assert_eq!(h.depth("42823").unwrap(), 3);
        assert_eq!(h.parent("428").unwrap(), None);
    }

    #[test]
    fn explicit_root_parent() {
        let h = tree(&[("A", "ROOT")]).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.depth("A").unwrap(), 1);
        assert!(h.ancestors("A").unwrap().is_empty());
    }

    #[test]
    fn cycles_rejected() {
        let err = tree(&[("X", "Y"), ("Y", "X")]).unwrap_err();
        assert!(matches!(err, Error::Structure(ref m) if m.contains("cycle")), "{err}");
        assert!(matches!(tree(&[("X", "X")]), Err(Error::Structure(_))));
    }

    #[test]
    fn conflicting_parents_rejected() {
        assert!(matches!(tree(&[("A", "B"), ("A", "C")]), Err(Error::Structure(_))));
        // Repeating the same edge is harmless.
        assert!(tree(&[("A", "B"), ("A", "B")]).is_ok());
    }

    #[test]
    fn empty_edges_rejected() {
        assert!(matches!(tree(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn ancestors_nearest_first() {
        let h = heart_failure();
        let names = |c: &str| -> Vec<String> {
            h.ancestors(c).unwrap().iter().map(|c| c.to_string()).collect()
        };
        assert_eq!(names("42823"), ["4282", "428"]);
        assert_eq!(names("4282"), ["428"]);
        assert!(names("428").is_empty());
        assert!(matches!(h.ancestors("999"), Err(Error::UnknownConcept(_))));
    }

    #[test]
    fn wu_palmer_examples() {
        let h = heart_failure();
        assert!((h.wu_palmer_distance("4282", "42823").unwrap() - 0.2).abs() < 1e-15);
        assert!((h.wu_palmer_distance("42823", "42820").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.wu_palmer_distance("42823", "42823").unwrap(), 0.0);
        // Same depth, sibling under 428: 1 - 2*1/(2+2).
        assert!((h.wu_palmer_distance("4289", "4282").unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unrelated_roots_are_maximally_distant() {
        let h = tree(&[("A1", "A"), ("B1", "B")]).unwrap();
        assert_eq!(h.wu_palmer_distance("A1", "B1").unwrap(), 1.0);
        assert_eq!(h.wu_palmer_distance("A", "B").unwrap(), 1.0);
    }

    #[test]
    fn icd9_prefix_inference() {
        let edges = infer_icd9_edges(&[cid("42823")]).unwrap();
        assert_eq!(edges, vec![(cid("4282"), cid("428")), (cid("42823"), cid("4282"))]);
        assert!(infer_icd9_edges(&[cid("428")]).unwrap().is_empty());
        assert_eq!(
            infer_icd9_edges(&[cid("0389"), cid("038")]).unwrap(),
            vec![(cid("0389"), cid("038"))]
        );
        assert!(infer_icd9_edges(&[cid("42")]).is_err());
        assert!(infer_icd9_edges(&[cid("V4501")]).is_ok());
    }

    #[test]
    fn orphans_attach_under_root() {
        let h = heart_failure().with_orphans([&cid("7061")]).unwrap();
        assert_eq!(h.depth("7061").unwrap(), 1);
        assert_eq!(h.wu_palmer_distance("7061", "428").unwrap(), 1.0);
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let text = "# comment\n42823\t4282\n4282\t428\n\n";
        let edges = read_edges_tsv(text.as_bytes(), "h.tsv").unwrap();
        let h = ConceptHierarchy::from_edges(edges).unwrap();
        let mut buf = Vec::new();
        h.write_tsv(&mut buf).unwrap();
        let again = ConceptHierarchy::from_edges(read_edges_tsv(buf.as_slice(), "x").unwrap()).unwrap();
        assert_eq!(again.concepts(), h.concepts());
        assert_eq!(again.depth("42823").unwrap(), 3);

        let err = read_edges_tsv("a\tb\tc\n".as_bytes(), "bad.tsv").unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn concept_id_validation() {
        assert!(ConceptId::new("").is_err());
        assert!(ConceptId::new("42 8").is_err());
        assert!(ConceptId::new("V45.01").is_ok());
    }
}
