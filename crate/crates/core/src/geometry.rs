//! Locations, orderings and directed nearest-neighbor graphs.
//!
//! All downstream factors work in *ordered positions*: position `k` holds the
//! input point `order[k]`. [`Permutation`] converts vectors between input
//! order and ordered positions.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, NngpError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// A permutation where entry `k` is the input index placed at position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            position: (0..n).collect(),
        }
    }

    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (k, &idx) in order.iter().enumerate() {
            if idx >= n || position[idx] != usize::MAX {
                return Err(NngpError::InvalidParameter(format!(
                    "order is not a permutation of 0..{n}"
                )));
            }
            position[idx] = k;
        }
        Ok(Self { order, position })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Input indices in ordered sequence.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Ordered position of input index `idx`.
    pub fn position_of(&self, idx: usize) -> usize {
        self.position[idx]
    }

    /// Rearranges input-order values into ordered positions.
    pub fn to_ordered<T: Clone>(&self, values: &[T]) -> Result<Vec<T>> {
        check_len(self.len(), values.len())?;
        Ok(self.order.iter().map(|&i| values[i].clone()).collect())
    }

    /// Rearranges ordered-position values back into input order.
    pub fn to_input<T: Clone>(&self, values: &[T]) -> Result<Vec<T>> {
        check_len(self.len(), values.len())?;
        Ok(self.position.iter().map(|&k| values[k].clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingStrategy {
    /// Ascending first coordinate, ties by second coordinate, then input index.
    CoordinateSort,
    /// Uniform random permutation from the given seed.
    Random(u64),
}

/// A point cloud together with its ordering.
#[derive(Debug, Clone)]
pub struct LocationSet {
    coords: Vec<Point>,
    ordered: Vec<Point>,
    order: Permutation,
}

impl LocationSet {
    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Points in ordered sequence.
    pub fn ordered_points(&self) -> &[Point] {
        &self.ordered
    }

    pub fn permutation(&self) -> &Permutation {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn with_order(coords: Vec<Point>, order: Permutation) -> Result<Self> {
        check_len(coords.len(), order.len())?;
        validate_points(&coords)?;
        let ordered = order.order().iter().map(|&i| coords[i]).collect();
        Ok(Self { coords, ordered, order })
    }
}

fn validate_points(points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(NngpError::EmptyLocations);
    }
    if let Some(index) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(NngpError::NonFiniteCoordinate { index });
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| lexicographic(&points[a], &points[b]).then(a.cmp(&b)));
    for w in idx.windows(2) {
        let (a, b) = (points[w[0]], points[w[1]]);
        if a == b {
            return Err(NngpError::DuplicateLocation {
                first: w[0],
                second: w[1],
                x: a.x,
                y: a.y,
            });
        }
    }
    Ok(())
}

fn lexicographic(a: &Point, b: &Point) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

pub fn order_locations(points: &[Point], strategy: OrderingStrategy) -> Result<LocationSet> {
    validate_points(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    match strategy {
        OrderingStrategy::CoordinateSort => {
            order.sort_by(|&a, &b| lexicographic(&points[a], &points[b]).then(a.cmp(&b)));
        }
        OrderingStrategy::Random(seed) => {
            order.shuffle(&mut rng::seeded(seed));
        }
    }
    LocationSet::with_order(points.to_vec(), Permutation::new(order)?)
}

/// Directed neighbor sets in compressed row form.
///
/// Row `i` lists ordered positions `j < i`, ascending. Graphs produced by
/// [`build_neighbor_graph`] have exactly `min(i, m)` entries per row; graphs
/// from [`NeighborGraph::from_lists`] only guarantee `|row| <= m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    m: usize,
}

impl NeighborGraph {
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        let mut m = 0;
        offsets.push(0);
        for (i, mut row) in lists.into_iter().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) || row.iter().any(|&j| j >= i) {
                return Err(NngpError::InvalidGraph(format!(
                    "row {i} must list distinct earlier positions"
                )));
            }
            m = m.max(row.len());
            indices.extend(row);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices, m })
    }

    /// A graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            indices: Vec::new(),
            m: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_neighbors(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

pub fn build_neighbor_graph(locs: &LocationSet, m: usize) -> Result<Arc<NeighborGraph>> {
    if m == 0 {
        return Err(NngpError::InvalidParameter("m must be at least 1".into()));
    }
    let points = locs.ordered_points();
    let index = NeighborIndex::new(points);
    let mut lists = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut row = index.nearest(p, m, i);
        row.sort_unstable();
        lists.push(row);
    }
    let mut graph = NeighborGraph::from_lists(lists)?;
    graph.m = m;
    Ok(Arc::new(graph))
}

/// Uniform-grid spatial index returning exact k-nearest neighbors.
///
/// Points are identified by their position in the slice passed to
/// [`NeighborIndex::new`]; distance ties go to the smaller position.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    points: &'a [Point],
    x0: f64,
    y0: f64,
    width: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let n = points.len().max(1);
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        if points.is_empty() {
            (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
        }
        let span = (xmax - xmin).max(ymax - ymin).max(f64::MIN_POSITIVE);
        // about two points per cell for a square domain
        let per_side = ((n as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let width = span / per_side as f64 * (1.0 + 1e-9);
        let nx = (((xmax - xmin) / width) as usize + 1).min(per_side);
        let ny = (((ymax - ymin) / width) as usize + 1).min(per_side);
        let mut index = Self {
            points,
            x0: xmin,
            y0: ymin,
            width,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        };
        for (pos, p) in points.iter().enumerate() {
            let (cx, cy) = index.cell_of(p);
            index.cells[cy * nx + cx].push(pos);
        }
        index
    }

    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let clamp = |v: f64, hi: usize| -> usize {
            if v <= 0.0 {
                0
            } else {
                (v as usize).min(hi - 1)
            }
        };
        (
            clamp((p.x - self.x0) / self.width, self.nx),
            clamp((p.y - self.y0) / self.width, self.ny),
        )
    }

    /// The `k` nearest indexed points among positions `< before`, sorted by
    /// distance then position.
    pub fn nearest(&self, query: &Point, k: usize, before: usize) -> Vec<usize> {
        let before = before.min(self.points.len());
        if k == 0 || before == 0 {
            return Vec::new();
        }
        if before <= k {
            let mut all: Vec<usize> = (0..before).collect();
            all.sort_by(|&a, &b| self.key(query, a).partial_cmp(&self.key(query, b)).unwrap());
            return all;
        }
        let (cx, cy) = self.cell_of(query);
        let (cx, cy) = (cx as isize, cy as isize);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut r: isize = 0;
        loop {
            let (xlo, xhi, ylo, yhi) = (cx - r, cx + r, cy - r, cy + r);
            for gy in ylo.max(0)..=yhi.min(ny - 1) {
                let on_edge_row = gy == ylo || gy == yhi;
                let mut gx = xlo.max(0);
                while gx <= xhi.min(nx - 1) {
                    if on_edge_row || gx == xlo || gx == xhi {
                        self.scan_cell(gx as usize, gy as usize, query, k, before, &mut best);
                    }
                    gx = if on_edge_row || gx == xhi { gx + 1 } else { xhi };
                }
            }
            // distance from the query to any cell outside the visited block
            let mut bound = f64::INFINITY;
            if xlo > 0 {
                bound = bound.min((query.x - (self.x0 + xlo as f64 * self.width)).max(0.0));
            }
            if xhi < nx - 1 {
                bound = bound.min((self.x0 + (xhi + 1) as f64 * self.width - query.x).max(0.0));
            }
            if ylo > 0 {
                bound = bound.min((query.y - (self.y0 + ylo as f64 * self.width)).max(0.0));
            }
            if yhi < ny - 1 {
                bound = bound.min((self.y0 + (yhi + 1) as f64 * self.width - query.y).max(0.0));
            }
            if bound.is_infinite() {
                break;
            }
            if best.len() == k && best[k - 1].0 < bound * bound {
                break;
            }
            r += 1;
        }
        best.into_iter().map(|(_, pos)| pos).collect()
    }

    #[inline]
    fn key(&self, query: &Point, pos: usize) -> (f64, usize) {
        (query.dist2(&self.points[pos]), pos)
    }

    fn scan_cell(&self, gx: usize, gy: usize, query: &Point, k: usize, before: usize, best: &mut Vec<(f64, usize)>) {
        for &pos in &self.cells[gy * self.nx + gx] {
            if pos >= before {
                break;
            }
            let cand = self.key(query, pos);
            if best.len() == k && !lex_less(cand, best[k - 1]) {
                continue;
            }
            let at = best.partition_point(|&e| lex_less(e, cand));
            best.insert(at, cand);
            best.truncate(k);
        }
    }
}

#[inline]
fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
