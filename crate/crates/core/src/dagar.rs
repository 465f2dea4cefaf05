//! Areal models on region adjacency graphs: the DAGAR sparse Cholesky
//! construction and the proper CAR baseline, with variance and correlation
//! diagnostics grouped by graph symmetry.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, NngpError, Result};
use crate::factor::SparseCholesky;
use crate::geometry::{NeighborGraph, Permutation};
use crate::rng;

/// Smallest eigenvalue of `D - rho A` accepted as positive definite.
pub const CAR_EIGEN_TOLERANCE: f64 = 1e-10;

/// Undirected simple graph on regions `0..n` with a processing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealGraph {
    adjacency: Vec<Vec<usize>>,
    order: Permutation,
    grid_shape: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArealOrdering {
    /// Regions in label order.
    Input,
    /// Increasing degree, ties by label.
    Degree,
    Random(u64),
}

impl ArealGraph {
    /// Builds a graph from undirected edges, each listed once.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(NngpError::InvalidGraph("a graph needs at least one region".into()));
        }
        let mut adjacency = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(NngpError::InvalidGraph(format!(
                    "edge ({i}, {j}) refers to a region outside 0..{n}"
                )));
            }
            if i == j {
                return Err(NngpError::InvalidGraph(format!("self-loop at region {i}")));
            }
            if !adjacency[i].insert(j) {
                return Err(NngpError::InvalidGraph(format!("edge ({i}, {j}) listed twice")));
            }
            adjacency[j].insert(i);
        }
        Ok(Self {
            adjacency: adjacency.into_iter().map(|s| s.into_iter().collect()).collect(),
            order: Permutation::identity(n),
            grid_shape: None,
        })
    }

    /// Parses whitespace-separated `i j` pairs, one per line, 0-indexed.
    /// Blank lines and lines starting with `#` are skipped. The region count
    /// defaults to one more than the largest label.
    pub fn parse_edge_list(text: &str, n_regions: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| NngpError::InvalidGraph(format!("line {}: '{s}' is not a region index", lineno + 1)))
            };
            if fields.len() != 2 {
                return Err(NngpError::InvalidGraph(format!(
                    "line {}: expected two indices, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            edges.push((parse(fields[0])?, parse(fields[1])?));
        }
        let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
        let n = n_regions.unwrap_or(inferred);
        if n == 0 {
            return Err(NngpError::InvalidGraph("edge list is empty".into()));
        }
        Self::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    /// Star with center `0`.
    pub fn star(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::from_edges(n, &edges)
    }

    /// Rook-adjacency lattice; region `r * cols + c` sits at row `r`, column `c`.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        let mut g = Self::from_edges(rows * cols, &edges)?;
        g.grid_shape = Some((rows, cols));
        Ok(g)
    }

    /// Marks the graph as a `rows x cols` lattice labelled row-major.
    pub fn with_grid_shape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if self.adjacency != Self::grid(rows, cols)?.adjacency {
            return Err(NngpError::InvalidGraph(format!("graph is not a {rows}x{cols} grid")));
        }
        self.grid_shape = Some((rows, cols));
        Ok(self)
    }

    pub fn with_order(mut self, order: Permutation) -> Result<Self> {
        check_len(self.len(), order.len())?;
        self.order = order;
        Ok(self)
    }

    pub fn ordered(self, ordering: ArealOrdering) -> Result<Self> {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        match ordering {
            ArealOrdering::Input => {}
            ArealOrdering::Degree => idx.sort_by_key(|&i| (self.degree(i), i)),
            ArealOrdering::Random(seed) => idx.shuffle(&mut rng::seeded(seed)),
        }
        let order = Permutation::new(idx)?;
        self.with_order(order)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn order(&self) -> &Permutation {
        &self.order
    }

    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid_shape
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.adjacency.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Directed neighbor positions for every ordered position: adjacent
    /// regions that come earlier in the order.
    pub fn directed_neighbors(&self) -> NeighborGraph {
        let lists = (0..self.len())
            .map(|k| {
                let region = self.order.order()[k];
                let mut earlier: Vec<usize> = self.adjacency[region]
                    .iter()
                    .map(|&j| self.order.position_of(j))
                    .filter(|&p| p < k)
                    .collect();
                earlier.sort_unstable();
                earlier
            })
            .collect();
        NeighborGraph::from_lists(lists).expect("positions precede their row")
    }

    /// Dense adjacency matrix in region labels.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, nb) in self.adjacency.iter().enumerate() {
            for &j in nb {
                a[(i, j)] = 1.0;
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DagarSpec {
    pub rho: f64,
    pub sigma2: f64,
}

impl DagarSpec {
    pub fn new(rho: f64, sigma2: f64) -> Result<Self> {
        let s = Self { rho, sigma2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(NngpError::InvalidParameter(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(NngpError::InvalidParameter(format!(
                "sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }
}

/// DAGAR factor in ordered positions. Row `i` with `m` directed neighbors has
/// every coefficient equal to `rho / (1 + (m - 1) rho^2)` and conditional
/// variance `sigma2 / (1 + (m - 1) rho^2)`.
pub fn build_dagar_factor(graph: &ArealGraph, spec: &DagarSpec) -> Result<SparseCholesky> {
    spec.validate()?;
    let directed = Arc::new(graph.directed_neighbors());
    let rho = spec.rho;
    let mut b_rows = Vec::with_capacity(graph.len());
    let mut f = Vec::with_capacity(graph.len());
    for k in 0..graph.len() {
        let m = directed.neighbors(k).len() as f64;
        let denom = 1.0 + (m - 1.0) * rho * rho;
        b_rows.push(vec![rho / denom; m as usize]);
        f.push(spec.sigma2 / denom);
    }
    SparseCholesky::from_parts(directed, b_rows, f)
}

fn to_labels(graph: &ArealGraph, ordered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = graph.len();
    let pos = |i: usize| graph.order.position_of(i);
    DMatrix::from_fn(n, n, |i, j| ordered[(pos(i), pos(j))])
}

/// Dense DAGAR covariance in region labels.
pub fn dagar_covariance(graph: &ArealGraph, spec: &DagarSpec) -> Result<DMatrix<f64>> {
    let chol = build_dagar_factor(graph, spec)?;
    Ok(to_labels(graph, &chol.implied_covariance()))
}

/// Dense DAGAR precision `(I - B)' F^{-1} (I - B)` in region labels.
pub fn dagar_precision(graph: &ArealGraph, spec: &DagarSpec) -> Result<DMatrix<f64>> {
    let chol = build_dagar_factor(graph, spec)?;
    let n = graph.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in chol.row_entries(i) {
            l[(i, j)] = v;
        }
    }
    Ok(to_labels(graph, &(l.transpose() * l)))
}

/// Gaussian log-density of `w` (region labels) under the DAGAR model.
pub fn dagar_loglik(graph: &ArealGraph, spec: &DagarSpec, w: &[f64]) -> Result<f64> {
    check_len(graph.len(), w.len())?;
    let chol = build_dagar_factor(graph, spec)?;
    let ordered = graph.order.to_ordered(w)?;
    let q = chol.quad_form(&ordered, &ordered)?;
    Ok(-0.5 * graph.len() as f64 * (2.0 * PI).ln() - 0.5 * chol.log_det() - 0.5 * q)
}

/// Proper CAR precision `(D - rho A) / sigma2` in region labels.
pub fn car_precision(graph: &ArealGraph, rho: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    if !(sigma2.is_finite() && sigma2 > 0.0) || !rho.is_finite() {
        return Err(NngpError::InvalidParameter(format!(
            "invalid CAR parameters rho={rho}, sigma2={sigma2}"
        )));
    }
    let n = graph.len();
    let mut q = -rho * graph.adjacency_matrix();
    for i in 0..n {
        q[(i, i)] = graph.degree(i) as f64;
    }
    let smallest = q.clone().symmetric_eigenvalues().min();
    if smallest <= CAR_EIGEN_TOLERANCE {
        return Err(NngpError::NotPositiveDefinite {
            eigenvalue: smallest / sigma2,
        });
    }
    Ok(q / sigma2)
}

pub fn car_covariance(graph: &ArealGraph, rho: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    car_precision(graph, rho, sigma2)?
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(NngpError::NotPositiveDefinite { eigenvalue: f64::NAN })
}

/// Assignment of regions and edges to symmetry classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryClasses {
    pub vertex_group: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub edge_group: Vec<usize>,
}

impl SymmetryClasses {
    pub fn n_vertex_groups(&self) -> usize {
        self.vertex_group.iter().max().map_or(0, |g| g + 1)
    }

    pub fn n_edge_groups(&self) -> usize {
        self.edge_group.iter().max().map_or(0, |g| g + 1)
    }

    /// Classes of a `rows x cols` grid under its reflections (and rotations
    /// when square).
    pub fn grid(rows: usize, cols: usize) -> Self {
        let maps = |r: usize, c: usize| -> Vec<(usize, usize)> {
            let (rr, cc) = (rows - 1 - r, cols - 1 - c);
            let mut v = vec![(r, c), (rr, c), (r, cc), (rr, cc)];
            if rows == cols {
                v.extend([(c, r), (cc, r), (c, rr), (cc, rr)]);
            }
            v
        };
        let n = rows * cols;
        let vertex_key: Vec<(usize, usize)> = (0..n)
            .map(|v| maps(v / cols, v % cols).into_iter().min().expect("nonempty"))
            .collect();
        let g = ArealGraph::grid(rows, cols).expect("valid grid");
        let edges = g.edges();
        let edge_key: Vec<_> = edges
            .iter()
            .map(|&(a, b)| {
                let ia = maps(a / cols, a % cols);
                let ib = maps(b / cols, b % cols);
                ia.into_iter()
                    .zip(ib)
                    .map(|(x, y)| if x <= y { (x, y) } else { (y, x) })
                    .min()
                    .expect("nonempty")
            })
            .collect();
        Self {
            vertex_group: dense_ids(&vertex_key),
            edges,
            edge_group: dense_ids(&edge_key),
        }
    }

    /// Classes from user-supplied vertex labels; an edge's class is the
    /// unordered pair of its endpoint classes.
    pub fn from_vertex_labels(graph: &ArealGraph, labels: &[usize]) -> Result<Self> {
        check_len(graph.len(), labels.len())?;
        let edges = graph.edges();
        let edge_key: Vec<_> = edges
            .iter()
            .map(|&(a, b)| (labels[a].min(labels[b]), labels[a].max(labels[b])))
            .collect();
        Ok(Self {
            vertex_group: dense_ids(labels),
            edges,
            edge_group: dense_ids(&edge_key),
        })
    }

    /// Grid classes when the graph is a tagged grid, otherwise one class per degree.
    pub fn for_graph(graph: &ArealGraph) -> Self {
        match graph.grid_shape() {
            Some((r, c)) => Self::grid(r, c),
            None => {
                let deg: Vec<usize> = (0..graph.len()).map(|i| graph.degree(i)).collect();
                Self::from_vertex_labels(graph, &deg).expect("length matches")
            }
        }
    }
}

fn dense_ids<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let ids: BTreeMap<K, usize> = keys
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    keys.iter().map(|k| ids[k]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArealModel {
    Car,
    Dagar,
}

/// Variances and neighbor correlations at one `rho`, grouped by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub model: ArealModel,
    pub rho: f64,
    /// Set when the precision is not positive definite at this `rho`.
    pub singular: bool,
    /// Mean variance of the regions in each vertex class.
    pub group_variances: Vec<f64>,
    /// Mean correlation of the neighbor pairs in each edge class.
    pub edge_correlations: Vec<f64>,
    /// Largest over smallest variance across all regions.
    pub variance_ratio: f64,
}

fn summarize(model: ArealModel, rho: f64, cov: Option<DMatrix<f64>>, classes: &SymmetryClasses) -> DiagnosticRow {
    let Some(cov) = cov else {
        return DiagnosticRow {
            model,
            rho,
            singular: true,
            group_variances: vec![f64::NAN; classes.n_vertex_groups()],
            edge_correlations: vec![f64::NAN; classes.n_edge_groups()],
            variance_ratio: f64::NAN,
        };
    };
    let group_mean = |groups: &[usize], k: usize, values: &[f64]| -> Vec<f64> {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&g, &v) in groups.iter().zip(values) {
            sum[g] += v;
            count[g] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
    };
    let diag: Vec<f64> = cov.diagonal().iter().copied().collect();
    let corr: Vec<f64> = classes
        .edges
        .iter()
        .map(|&(i, j)| cov[(i, j)] / (diag[i] * diag[j]).sqrt())
        .collect();
    let max = diag.iter().copied().fold(f64::MIN, f64::max);
    let min = diag.iter().copied().fold(f64::MAX, f64::min);
    DiagnosticRow {
        model,
        rho,
        singular: false,
        group_variances: group_mean(&classes.vertex_group, classes.n_vertex_groups(), &diag),
        edge_correlations: group_mean(&classes.edge_group, classes.n_edge_groups(), &corr),
        variance_ratio: max / min,
    }
}

/// CAR variances and correlations over `rho_grid`; singular values of `rho` are flagged.
pub fn car_diagnostics(
    graph: &ArealGraph,
    classes: &SymmetryClasses,
    rho_grid: &[f64],
    sigma2: f64,
) -> Result<Vec<DiagnosticRow>> {
    check_len(graph.len(), classes.vertex_group.len())?;
    rho_grid
        .par_iter()
        .map(|&rho| match car_covariance(graph, rho, sigma2) {
            Ok(cov) => Ok(summarize(ArealModel::Car, rho, Some(cov), classes)),
            Err(NngpError::NotPositiveDefinite { .. }) => Ok(summarize(ArealModel::Car, rho, None, classes)),
            Err(e) => Err(e),
        })
        .collect()
}

pub fn dagar_diagnostics(
    graph: &ArealGraph,
    classes: &SymmetryClasses,
    rho_grid: &[f64],
    sigma2: f64,
) -> Result<Vec<DiagnosticRow>> {
    check_len(graph.len(), classes.vertex_group.len())?;
    rho_grid
        .par_iter()
        .map(|&rho| {
            let cov = dagar_covariance(graph, &DagarSpec::new(rho, sigma2)?)?;
            Ok(summarize(ArealModel::Dagar, rho, Some(cov), classes))
        })
        .collect()
}
