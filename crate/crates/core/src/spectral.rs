//! Symmetric eigensolver and the two spectral embeddings built on it:
//! classical scaling of geodesics (Isomap) and the normalized-Laplacian
//! eigenmap of the weighted k-NN graph.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distances::str_enum;
use crate::error::{Error, Result};
use crate::graph::{GeodesicMatrix, KnnGraph};

/// Default residual tolerance, relative to `‖A‖_∞`.
pub const DEFAULT_EIG_TOL: f64 = 1e-8;

/// Default guard added to distances before inverting them into edge weights.
pub const DEFAULT_EIGENMAP_EPS: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Largest,
    Smallest,
}

/// Eigenpairs in the requested order with their residuals `‖Av − λv‖₂`.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    /// n × count, orthonormal columns.
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

/// `count` extreme eigenpairs of a dense symmetric matrix.
///
/// Each eigenvector is signed so that its largest-magnitude component is
/// positive (first such component on ties). Fails if any returned pair has a
/// residual above `tol · ‖A‖_∞`.
pub fn sym_eigs(a: &DMatrix<f64>, count: usize, which: Which, tol: f64) -> Result<EigenResult> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::argument(format!("matrix is {n}x{m}, not square")));
    }
    if count == 0 || count > n {
        return Err(Error::argument(format!("eigenpair count {count} outside 1..={n}")));
    }
    let scale = a.amax();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::argument(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::argument("matrix has non-finite entries"));
    }
    let sym = (a + a.transpose()) * 0.5;
    let max_iter = 200 * n.max(10);
    let eig = sym.clone().try_symmetric_eigen(f64::EPSILON, max_iter).ok_or_else(|| Error::Numeric {
        message: "symmetric eigensolver did not converge".into(),
        iterations: max_iter,
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        let (vx, vy) = (eig.eigenvalues[x], eig.eigenvalues[y]);
        match which {
            Which::Largest => vy.total_cmp(&vx),
            Which::Smallest => vx.total_cmp(&vy),
        }
        .then(x.cmp(&y))
    });
    order.truncate(count);

    let norm_inf = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut values = Vec::with_capacity(count);
    let mut vectors = DMatrix::zeros(n, count);
    let mut residuals = Vec::with_capacity(count);
    for (k, &idx) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[idx];
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        let r = (&sym * &v - &v * lambda).norm();
        if r > tol * norm_inf.max(f64::MIN_POSITIVE) {
            return Err(Error::Numeric {
                message: format!("eigenpair {k} residual {r:e} exceeds {tol:e}·‖A‖∞ = {:e}", tol * norm_inf),
                iterations: max_iter,
            });
        }
        values.push(lambda);
        vectors.set_column(k, &v);
        residuals.push(r);
    }
    Ok(EigenResult {
        values,
        vectors,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMethod {
    Isomap,
    Eigenmap,
}

str_enum!(EmbedMethod, "embedding method",
    "isomap" => EmbedMethod::Isomap,
    "eigenmap" => EmbedMethod::Eigenmap,
);

/// Low-dimensional coordinates, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub ids: Vec<String>,
    pub coords: DMatrix<f64>,
    pub method: Option<EmbedMethod>,
}

impl Embedding {
    pub fn new(ids: Vec<String>, coords: DMatrix<f64>, method: Option<EmbedMethod>) -> Result<Self> {
        if ids.len() != coords.nrows() {
            return Err(Error::argument(format!(
                "{} ids for {} coordinate rows",
                ids.len(),
                coords.nrows()
            )));
        }
        if coords.ncols() == 0 {
            return Err(Error::argument("embedding needs at least one dimension"));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                message: "embedding contains non-finite coordinates".into(),
                iterations: 0,
            });
        }
        Ok(Embedding { ids, coords, method })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn euclidean(&self, i: usize, j: usize) -> f64 {
        (self.coords.row(i) - self.coords.row(j)).norm()
    }

    /// Rows of this embedding in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Embedding> {
        let pos: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::UnknownItem(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let coords = DMatrix::from_fn(rows.len(), self.dim(), |r, c| self.coords[(rows[r], c)]);
        Ok(Embedding {
            ids: ids.to_vec(),
            coords,
            method: self.method,
        })
    }

    /// Header `id<TAB>y1…y{dim}`, values in C `%.8e` form.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "id")?;
        for k in 1..=self.dim() {
            write!(w, "\ty{k}")?;
        }
        writeln!(w)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for k in 0..self.dim() {
                write!(w, "\t{}", CExp(self.coords[(i, k)]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::io(source_name, e))?,
            None => return Err(Error::format(source_name, 1, "missing header row")),
        };
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.first() != Some(&"id") || cols.len() < 2 {
            return Err(Error::format(source_name, 1, "header must be `id<TAB>y1…`"));
        }
        let dim = cols.len() - 1;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(source_name, i + 1, m);
            let mut f = line.split('\t');
            ids.push(f.next().unwrap_or_default().to_string());
            let row = f
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != dim {
                return Err(bad(format!("expected {dim} values, found {}", row.len())));
            }
            data.extend(row);
        }
        Embedding::new(ids.clone(), DMatrix::from_row_slice(ids.len(), dim, &data), None)
    }
}

/// Formats like C's `%.8e`: `-1.23456789e+02`.
pub struct CExp(pub f64);

impl fmt::Display for CExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{:.8e}", self.0);
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("integer exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        write!(f, "{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Classical scaling of the double-centred squared geodesics.
///
/// Eigenvalues that are non-positive (within `1e-10` of the largest) are
/// clipped to zero and give all-zero columns.
pub fn isomap(d: &GeodesicMatrix, dim: usize) -> Result<Embedding> {
    let n = d.len();
    if dim == 0 || dim >= n {
        return Err(Error::argument(format!("dim={dim} must satisfy 1 <= dim < n={n}")));
    }
    if !d.is_finite() {
        return Err(Error::Connectivity(
            "geodesic matrix has infinite entries; embed one connected component".into(),
        ));
    }
    let sq = d.values.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| sq.column(j).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - col_mean[j] + grand));
    let b = (&b + b.transpose()) * 0.5;

    let eig = sym_eigs(&b, dim, Which::Largest, DEFAULT_EIG_TOL)?;
    let top = eig.values[0].abs().max(f64::MIN_POSITIVE);
    let mut coords = DMatrix::zeros(n, dim);
    let mut clipped = 0;
    for k in 0..dim {
        let lambda = eig.values[k];
        if lambda <= 1e-10 * top {
            clipped += 1;
            continue;
        }
        coords.set_column(k, &(eig.vectors.column(k) * lambda.sqrt()));
    }
    if clipped > 0 {
        log::warn!("isomap: {clipped} of {dim} eigenvalues were non-positive; their columns are zero");
    }
    Embedding::new(d.ids.clone(), coords, Some(EmbedMethod::Isomap))
}

/// Inverse-distance weights `1 / (length + eps)` as a dense adjacency matrix.
pub fn eigenmap_weights(g: &KnnGraph, eps: f64) -> DMatrix<f64> {
    let n = g.len();
    let mut w = DMatrix::zeros(n, n);
    for (i, j, len) in g.edges() {
        let v = 1.0 / (len + eps);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    w
}

/// Laplacian eigenmap: generalized eigenvectors of `L y = λ D y`, trivial one dropped.
///
/// Solved through the symmetric normalization `D^{-1/2} L D^{-1/2}`; columns
/// are mapped back with `D^{-1/2}` and made exactly `D`-orthogonal to the
/// constant vector.
pub fn laplacian_eigenmap(g: &KnnGraph, dim: usize, eps: f64) -> Result<Embedding> {
    let n = g.len();
    if dim == 0 || dim >= n {
        return Err(Error::argument(format!("dim={dim} must satisfy 1 <= dim < n={n}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::argument(format!("eps={eps} must be non-negative")));
    }
    if !g.is_connected() {
        return Err(Error::Connectivity(format!(
            "graph has {} components; embed the largest component or bridge them first",
            g.components().len()
        )));
    }
    let w = eigenmap_weights(g, eps);
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if let Some(i) = deg.iter().position(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Degenerate(format!(
            "node `{}` has weighted degree {}",
            g.ids()[i],
            deg[i]
        )));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
    });
    let eig = sym_eigs(&m, dim + 1, Which::Smallest, DEFAULT_EIG_TOL)?;

    let total_deg: f64 = deg.iter().sum();
    let mut coords = DMatrix::zeros(n, dim);
    for k in 0..dim {
        let mut y: DVector<f64> = DVector::from_fn(n, |i, _| eig.vectors[(i, k + 1)] * inv_sqrt[i]);
        let along_const = y.iter().zip(&deg).map(|(v, d)| v * d).sum::<f64>() / total_deg;
        y.add_scalar_mut(-along_const);
        coords.set_column(k, &y);
    }
    Embedding::new(g.ids().to_vec(), coords, Some(EmbedMethod::Eigenmap))
}

/// `Σ_{i<j} w_ij ‖Y_i − Y_j‖²` for a weight matrix and coordinates.
pub fn eigenmap_objective(w: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] != 0.0 {
                total += w[(i, j)] * (y.row(i) - y.row(j)).norm_squared();
            }
        }
    }
    total
}

impl FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "largest" => Ok(Which::Largest),
            "smallest" => Ok(Which::Smallest),
            other => Err(Error::argument(format!("unknown eigenvalue end `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn identity_and_diagonal() {
        let e = sym_eigs(&DMatrix::identity(3, 3), 3, Which::Largest, 1e-12).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 2.0, -1.0]));
        let e = sym_eigs(&d, 2, Which::Largest, 1e-12).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0]);
        assert_eq!(e.vectors.column(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(e.vectors.column(1).as_slice(), &[0.0, 1.0, 0.0]);
        let s = sym_eigs(&d, 1, Which::Smallest, 1e-12).unwrap();
        assert_eq!(s.values, vec![-1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eigs(&ns, 1, Which::Largest, 1e-8), Err(Error::Argument(_))));
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(sym_eigs(&id, 0, Which::Largest, 1e-8).is_err());
        assert!(sym_eigs(&id, 3, Which::Largest, 1e-8).is_err());
    }

    #[test]
    fn sign_convention() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let e = sym_eigs(&a, 2, Which::Largest, 1e-12).unwrap();
        for k in 0..2 {
            let col = e.vectors.column(k);
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn isomap_line_is_isometric() {
        let g = KnnGraph::from_edges(ids(4), [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let gm = crate::graph::geodesics(&g).unwrap();
        let y = isomap(&gm, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((y.euclidean(i, j) - gm.get(i, j)).abs() < 1e-10);
            }
        }
        assert!(y.coords.column(0).sum().abs() < 1e-10);
    }

    #[test]
    fn isomap_requires_connectivity() {
        let g = KnnGraph::from_edges(ids(3), [(0, 1, 1.0)]).unwrap();
        let gm = crate::graph::geodesics(&g).unwrap();
        assert!(matches!(isomap(&gm, 1), Err(Error::Connectivity(_))));
    }

    #[test]
    fn isomap_pads_when_rank_is_short() {
        // Two points: only one positive eigenvalue exists.
        let g = KnnGraph::from_edges(ids(3), [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let gm = crate::graph::geodesics(&g).unwrap();
        let y = isomap(&gm, 2).unwrap();
        assert!(y.coords.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenmap_on_path_is_monotone() {
        let g = KnnGraph::from_edges(ids(5), (0..4).map(|i| (i, i + 1, 1.0))).unwrap();
        let y = laplacian_eigenmap(&g, 1, DEFAULT_EIGENMAP_EPS).unwrap();
        let c = y.coords.column(0);
        let inc = (0..4).all(|i| c[i] < c[i + 1]);
        let dec = (0..4).all(|i| c[i] > c[i + 1]);
        assert!(inc || dec, "{c:?}");
    }

    #[test]
    fn eigenmap_rejects_disconnected() {
        let g = KnnGraph::from_edges(ids(4), [(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(laplacian_eigenmap(&g, 1, 1e-9), Err(Error::Connectivity(_))));
    }

    #[test]
    fn c_style_exponent() {
        assert_eq!(CExp(123.456).to_string(), "1.23456000e+02");
        assert_eq!(CExp(-0.000123).to_string(), "-1.23000000e-04");
        assert_eq!(CExp(0.0).to_string(), "0.00000000e+00");
        assert_eq!(CExp(1e200).to_string(), "1.00000000e+200");
    }

    #[test]
    fn embedding_tsv_round_trip() {
        let e = Embedding::new(ids(2), DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 0.25, 1e-3]), None).unwrap();
        let mut buf = Vec::new();
        e.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id\ty1\ty2\nn0\t1.50000000e+00\t-2.00000000e+00\n"));
        assert_eq!(Embedding::read_tsv(buf.as_slice(), "e").unwrap(), e);
    }
}
