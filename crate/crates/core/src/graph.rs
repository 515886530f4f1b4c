//! k-nearest-neighbour record networks and shortest-path (geodesic) distances.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};

/// Undirected weighted graph over record ids.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    ids: Vec<String>,
    /// Sorted by neighbour index; every edge is stored in both endpoints.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    /// Builds a graph from undirected edges `(i, j, length)`; duplicates keep the first length.
    pub fn from_edges(ids: Vec<String>, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let n = ids.len();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::argument(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::argument(format!("self-loop on `{}`", ids[i])));
            }
            if !adjacency[i].iter().any(|&(k, _)| k == j) {
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
        }
        for a in &mut adjacency {
            a.sort_by_key(|&(k, _)| k);
        }
        Ok(KnnGraph { ids, adjacency })
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

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search_by_key(&j, |&(k, _)| k).is_ok()
    }

    /// Edges with `i < j`, in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, a)| a.iter().filter(move |&&(j, _)| j > i).map(move |&(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Connected components as sorted node-index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![s];
            comp[s] = id;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &(v, _) in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        members.push(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Induced subgraph on `keep` (sorted node indices), preserving order.
    pub fn subgraph(&self, keep: &[usize]) -> KnnGraph {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let ids = keep.iter().map(|&i| self.ids[i].clone()).collect();
        let adjacency = keep
            .iter()
            .map(|&old| {
                self.adjacency[old]
                    .iter()
                    .filter_map(|&(j, w)| remap.get(&j).map(|&nj| (nj, w)))
                    .collect()
            })
            .collect();
        KnnGraph { ids, adjacency }
    }

    /// `id_i<TAB>id_j<TAB>length` per undirected edge, each edge once.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j, len) in self.edges() {
            writeln!(w, "{}\t{}\t{len:.6}", self.ids[i], self.ids[j])?;
        }
        Ok(())
    }

    /// Reads an edge list over the node set `ids` (which fixes node order).
    pub fn read_edge_list<R: BufRead>(reader: R, ids: Vec<String>, source_name: &str) -> Result<Self> {
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut edges = Vec::new();
        for (ln, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(source_name, ln + 1, m);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected `id_i<TAB>id_j<TAB>length`".into()));
            }
            let node = |s: &str| index.get(s).copied().ok_or_else(|| bad(format!("unknown node `{s}`")));
            let w: f64 = f[2].parse().map_err(|_| bad(format!("bad length `{}`", f[2])))?;
            edges.push((node(f[0])?, node(f[1])?, w));
        }
        drop(index);
        KnnGraph::from_edges(ids, edges)
    }
}

/// Mutual-OR k-NN graph: `i ~ j` when either is among the other's `k_nn` nearest.
///
/// Each node selects exactly `k_nn` neighbours; equal distances are ordered
/// by ascending record id. Edge length is the matrix entry.
pub fn build_knn_graph(dm: &DistanceMatrix, k_nn: usize) -> Result<KnnGraph> {
    let n = dm.len();
    if k_nn == 0 || k_nn >= n {
        return Err(Error::argument(format!(
            "k_nn={k_nn} must satisfy 1 <= k_nn < n={n}"
        )));
    }
    let ids = dm.ids();
    let picks: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| {
                dm.get(i, a)
                    .total_cmp(&dm.get(i, b))
                    .then_with(|| ids[a].cmp(&ids[b]))
            });
            cand.truncate(k_nn);
            cand
        })
        .collect();
    let edges = picks
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.iter().map(move |&j| (i.min(j), i.max(j), dm.get(i, j))));
    KnnGraph::from_edges(ids.to_vec(), edges)
}

/// Keeps the largest connected component (ties: the one holding the smallest id).
/// Returns the subgraph and the dropped ids in original order.
pub fn largest_component(g: &KnnGraph) -> (KnnGraph, Vec<String>) {
    let comps = g.components();
    let Some(best) = comps.iter().max_by(|a, b| {
        a.len().cmp(&b.len()).then_with(|| {
            let min_id = |c: &Vec<usize>| c.iter().map(|&i| &g.ids[i]).min().cloned();
            // Reverse so that the smaller id wins the max.
            min_id(b).cmp(&min_id(a))
        })
    }) else {
        return (g.clone(), Vec::new());
    };
    let mut keep = vec![false; g.len()];
    for &i in best {
        keep[i] = true;
    }
    let dropped = (0..g.len()).filter(|&i| !keep[i]).map(|i| g.ids[i].clone()).collect();
    (g.subgraph(best), dropped)
}

/// Joins components by repeatedly adding the single shortest edge (per `dm`)
/// between two different components. Returns the connected graph and the added edges.
pub fn connect_components(g: &KnnGraph, dm: &DistanceMatrix) -> Result<(KnnGraph, Vec<(usize, usize, f64)>)> {
    if dm.ids() != g.ids() {
        return Err(Error::argument("distance matrix and graph have different node ids"));
    }
    let mut graph = g.clone();
    let mut added = Vec::new();
    loop {
        let comps = graph.components();
        if comps.len() <= 1 {
            return Ok((graph, added));
        }
        let mut label = vec![0usize; graph.len()];
        for (c, members) in comps.iter().enumerate() {
            for &i in members {
                label[i] = c;
            }
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..graph.len() {
            for j in i + 1..graph.len() {
                if label[i] == label[j] {
                    continue;
                }
                let d = dm.get(i, j);
                let better = match best {
                    None => true,
                    Some((bd, _, _)) => d < bd,
                };
                if better {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("at least two components");
        added.push((i, j, d));
        graph = KnnGraph::from_edges(
            graph.ids.clone(),
            graph.edges().chain(std::iter::once((i, j, d))).collect::<Vec<_>>(),
        )?;
    }
}

/// All-pairs shortest-path lengths; `+∞` between components.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicMatrix {
    pub ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl GeodesicMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn dijkstra(g: &KnnGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((Dist(0.0), source)));
    while let Some(Reverse((Dist(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Dist(nd), v)));
            }
        }
    }
    dist
}

/// Exact geodesics by one priority-queue search per source (sources run in parallel).
pub fn geodesics(g: &KnnGraph) -> Result<GeodesicMatrix> {
    if g.is_empty() {
        return Err(Error::argument("graph has no nodes"));
    }
    if let Some((i, j, w)) = g.edges().find(|&(_, _, w)| !(w >= 0.0)) {
        return Err(Error::argument(format!(
            "edge ({}, {}) has invalid length {w}",
            g.ids[i], g.ids[j]
        )));
    }
    let n = g.len();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(g, s)).collect();
    let mut values = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    // Both directions are computed independently; pin exact symmetry.
    for i in 0..n {
        for j in i + 1..n {
            let m = values[(i, j)].min(values[(j, i)]);
            values[(i, j)] = m;
            values[(j, i)] = m;
        }
    }
    Ok(GeodesicMatrix {
        ids: g.ids.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i:02}")).collect()
    }

    #[test]
    fn collinear_points_give_a_path() {
        let xs = [0.0f64, 1.0, 2.0];
        let dm = DistanceMatrix::from_fn(ids(3), |i, j| (xs[i] - xs[j]).abs());
        let g = build_knn_graph(&dm, 1).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn equidistant_ties_resolved_by_id() {
        // Every node picks its id-smallest neighbour: r00 -> r01, r01 -> r00, r02 -> r00.
        let dm = DistanceMatrix::from_fn(ids(3), |_, _| 1.0);
        let g = build_knn_graph(&dm, 1).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(0, 2));
        assert!(!g.has_edge(1, 2));
        // With k = 2 everything is admitted.
        assert_eq!(build_knn_graph(&dm, 2).unwrap().edge_count(), 3);
    }

    #[test]
    fn knn_range_checked() {
        let dm = DistanceMatrix::from_fn(ids(3), |_, _| 1.0);
        assert!(build_knn_graph(&dm, 0).is_err());
        assert!(build_knn_graph(&dm, 3).is_err());
    }

    #[test]
    fn component_selection() {
        // Components {0..5} and {5..8}.
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (5, 6), (6, 7)].map(|(a, b)| (a, b, 1.0));
        let g = KnnGraph::from_edges(ids(8), edges).unwrap();
        let (big, dropped) = largest_component(&g);
        assert_eq!(big.len(), 5);
        assert_eq!(dropped, ["r05", "r06", "r07"]);

        let full = KnnGraph::from_edges(ids(3), [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let (same, none) = largest_component(&full);
        assert_eq!(same, full);
        assert!(none.is_empty());

        // Equal sizes: keep the component holding the smallest id.
        let tie = KnnGraph::from_edges(ids(4), [(2, 3, 1.0), (0, 1, 1.0)]).unwrap();
        let (kept, dropped) = largest_component(&tie);
        assert_eq!(kept.ids(), ["r00", "r01"]);
        assert_eq!(dropped, ["r02", "r03"]);
    }

    #[test]
    fn bridging_components() {
        let xs = [0.0f64, 1.0, 10.0, 11.0];
        let dm = DistanceMatrix::from_fn(ids(4), |i, j| (xs[i] - xs[j]).abs());
        let g = build_knn_graph(&dm, 1).unwrap();
        assert_eq!(g.components().len(), 2);
        let (joined, added) = connect_components(&g, &dm).unwrap();
        assert!(joined.is_connected());
        assert_eq!(added, vec![(1, 2, 9.0)]);
    }

    #[test]
    fn shortest_paths_small_cases() {
        let path = KnnGraph::from_edges(ids(3), [(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        assert_eq!(geodesics(&path).unwrap().get(0, 2), 3.0);

        let tri = KnnGraph::from_edges(ids(3), [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]).unwrap();
        assert_eq!(geodesics(&tri).unwrap().get(0, 2), 2.0);

        let split = KnnGraph::from_edges(ids(3), [(0, 1, 1.0)]).unwrap();
        let gm = geodesics(&split).unwrap();
        assert!(gm.get(0, 2).is_infinite());
        assert_eq!(gm.get(2, 2), 0.0);
    }

    #[test]
    fn negative_lengths_rejected() {
        let g = KnnGraph::from_edges(ids(2), [(0, 1, -1.0)]).unwrap();
        assert!(matches!(geodesics(&g), Err(Error::Argument(_))));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = KnnGraph::from_edges(ids(3), [(0, 1, 0.5), (1, 2, 0.25)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "r00\tr01\t0.500000\nr01\tr02\t0.250000\n");
        assert_eq!(KnnGraph::read_edge_list(buf.as_slice(), ids(3), "e").unwrap(), g);
    }
}
