//! Grid road network: cells, 8-neighbor adjacency, shortest paths.
//!
//! A [`RoadGraph`] is either generated from a [`GridSpec`] (all 8 neighbor
//! directions at distance 1) or loaded from an explicit edge list, which is
//! how the small worked-example instances are shipped. Graphs are immutable
//! after construction and cache single-source shortest-path tables, so they
//! can be shared read-only across concurrent route computations.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

/// Default grid cell edge length in miles.
pub const DEFAULT_CELL_SIZE_MILES: f64 = 1.24;

const INF: u32 = u32::MAX;

/// Index of a grid cell, valid in `[0, m)` for a graph with `m` cells.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct CellId(pub u32);

impl CellId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Error, Debug)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("cell {0} out of range for a graph with {1} cells")]
    CellOutOfRange(CellId, u32),
    #[error("cells {0} and {1} are not connected by any path")]
    Unreachable(CellId, CellId),
    #[error("road graph is not connected: only {0} of {1} cells reachable from cell 0")]
    Disconnected(u32, u32),
    #[error("cells {0} and {1} are not adjacent")]
    NotAdjacent(CellId, CellId),
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Dimensions of a generated grid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub cell_size_miles: f64,
}

impl GridSpec {
    pub fn new(rows: u32, cols: u32) -> GridSpec {
        GridSpec {
            rows,
            cols,
            cell_size_miles: DEFAULT_CELL_SIZE_MILES,
        }
    }

    pub fn with_cell_size(rows: u32, cols: u32, cell_size_miles: f64) -> GridSpec {
        GridSpec {
            rows,
            cols,
            cell_size_miles,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GridError::InvalidSpec(format!(
                "rows and cols must be >= 1 (got {}x{})",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size_miles > 0.0) {
            return Err(GridError::InvalidSpec(format!(
                "cell_size_miles must be > 0 (got {})",
                self.cell_size_miles
            )));
        }
        Ok(())
    }

    /// Total number of cells `m = rows * cols`.
    pub fn cells(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn cell_at(&self, row: u32, col: u32) -> CellId {
        debug_assert!(row < self.rows && col < self.cols);
        CellId(row * self.cols + col)
    }

    /// `(row, col)` coordinates of a cell.
    pub fn coords(&self, cell: CellId) -> (u32, u32) {
        (cell.0 / self.cols, cell.0 % self.cols)
    }
}

/// Weighted undirected adjacency over grid cells. Edge weights are abstract
/// nonnegative integer distance-units; generated grids use weight 1 for all
/// eight neighbor directions, and conversion to miles happens only in the
/// economics layer via `cell_size_miles`.
#[derive(Debug)]
pub struct RoadGraph {
    spec: Option<GridSpec>,
    cell_size_miles: f64,
    adj: Vec<Vec<(CellId, u32)>>,
    sp_cache: RwLock<HashMap<u32, Arc<Vec<u32>>>>,
}

/// Generates the road graph of a grid: every cell is connected to its up to 8
/// neighbors with distance 1.
pub fn build_grid(spec: GridSpec) -> Result<RoadGraph, GridError> {
    spec.validate()?;
    let m = spec.cells();
    let mut adj: Vec<Vec<(CellId, u32)>> = vec![Vec::new(); m as usize];
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let v = spec.cell_at(r, c);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= spec.rows as i64 || nc >= spec.cols as i64 {
                        continue;
                    }
                    let u = spec.cell_at(nr as u32, nc as u32);
                    adj[v.idx()].push((u, 1));
                }
            }
            adj[v.idx()].sort();
        }
    }
    Ok(RoadGraph {
        spec: Some(spec),
        cell_size_miles: spec.cell_size_miles,
        adj,
        sp_cache: RwLock::new(HashMap::new()),
    })
}

impl RoadGraph {
    /// Builds a graph from an explicit undirected edge list. Used for the
    /// small worked-example instances that are not grids.
    pub fn from_edges(
        cells: u32,
        edges: &[(u32, u32, u32)],
        cell_size_miles: f64,
    ) -> Result<RoadGraph, GridError> {
        if cells == 0 {
            return Err(GridError::InvalidSpec("graph needs at least one cell".into()));
        }
        let mut adj: Vec<Vec<(CellId, u32)>> = vec![Vec::new(); cells as usize];
        for &(u, v, w) in edges {
            for x in [u, v] {
                if x >= cells {
                    return Err(GridError::CellOutOfRange(CellId(x), cells));
                }
            }
            if u == v {
                return Err(GridError::InvalidSpec(format!("self edge at cell {u}")));
            }
            if adj[u as usize].iter().any(|&(n, _)| n.0 == v) {
                return Err(GridError::InvalidSpec(format!("duplicate edge {u} {v}")));
            }
            adj[u as usize].push((CellId(v), w));
            adj[v as usize].push((CellId(u), w));
        }
        for row in &mut adj {
            row.sort();
        }
        let g = RoadGraph {
            spec: None,
            cell_size_miles,
            adj,
            sp_cache: RwLock::new(HashMap::new()),
        };
        g.check_connected()?;
        Ok(g)
    }

    /// Parses the edge-list text format: a `cells m` header followed by one
    /// `u v w` line per edge (all integers). Blank lines and `#` comments are
    /// skipped.
    pub fn parse_edge_list(text: &str, cell_size_miles: f64) -> Result<RoadGraph, GridError> {
        let mut cells: Option<u32> = None;
        let mut edges: Vec<(u32, u32, u32)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |tok: &str| -> Result<u32, GridError> {
                tok.parse().map_err(|_| GridError::Parse {
                    line: i + 1,
                    msg: format!("expected an integer, got {tok:?}"),
                })
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            match (cells, toks.as_slice()) {
                (None, ["cells", m]) => cells = Some(parse(m)?),
                (None, _) => {
                    return Err(GridError::Parse {
                        line: i + 1,
                        msg: "expected header line `cells m`".into(),
                    })
                }
                (Some(_), [u, v, w]) => edges.push((parse(u)?, parse(v)?, parse(w)?)),
                (Some(_), _) => {
                    return Err(GridError::Parse {
                        line: i + 1,
                        msg: "expected edge line `u v w`".into(),
                    })
                }
            }
        }
        let cells = cells.ok_or(GridError::Parse {
            line: 0,
            msg: "missing `cells m` header".into(),
        })?;
        RoadGraph::from_edges(cells, &edges, cell_size_miles)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let m = self.cell_count();
        let mut seen = vec![false; m as usize];
        let mut queue = VecDeque::from([CellId(0)]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &self.adj[v.idx()] {
                if !seen[u.idx()] {
                    seen[u.idx()] = true;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        if reached != m {
            return Err(GridError::Disconnected(reached, m));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> u32 {
        self.adj.len() as u32
    }

    pub fn contains(&self, cell: CellId) -> bool {
        cell.0 < self.cell_count()
    }

    pub fn spec(&self) -> Option<&GridSpec> {
        self.spec.as_ref()
    }

    pub fn cell_size_miles(&self) -> f64 {
        self.cell_size_miles
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Neighbors of `v` with their edge distances, sorted by cell id.
    pub fn neighbors(&self, v: CellId) -> &[(CellId, u32)] {
        &self.adj[v.idx()]
    }

    /// Edge distance between adjacent cells, `None` if not adjacent.
    pub fn edge_dist(&self, u: CellId, v: CellId) -> Option<u32> {
        self.adj[u.idx()]
            .iter()
            .find(|&&(n, _)| n == v)
            .map(|&(_, w)| w)
    }

    fn check_cell(&self, v: CellId) -> Result<(), GridError> {
        if !self.contains(v) {
            return Err(GridError::CellOutOfRange(v, self.cell_count()));
        }
        Ok(())
    }

    /// Distance table from `src` to every cell (Dijkstra, cached).
    pub fn sp_table(&self, src: CellId) -> Result<Arc<Vec<u32>>, GridError> {
        self.check_cell(src)?;
        if let Some(t) = self.sp_cache.read().unwrap().get(&src.0) {
            return Ok(Arc::clone(t));
        }
        let mut dist = vec![INF; self.adj.len()];
        dist[src.idx()] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u32, src)));
        while let Some(Reverse((d, v))) = heap.pop() {
            if d > dist[v.idx()] {
                continue;
            }
            for &(u, w) in &self.adj[v.idx()] {
                let nd = d + w;
                if nd < dist[u.idx()] {
                    dist[u.idx()] = nd;
                    heap.push(Reverse((nd, u)));
                }
            }
        }
        let table = Arc::new(dist);
        self.sp_cache
            .write()
            .unwrap()
            .insert(src.0, Arc::clone(&table));
        Ok(table)
    }

    /// `|SP(a, b)|`: minimum total edge distance between two cells.
    pub fn shortest_path_len(&self, a: CellId, b: CellId) -> Result<u32, GridError> {
        self.check_cell(b)?;
        let d = self.sp_table(a)?[b.idx()];
        if d == INF {
            return Err(GridError::Unreachable(a, b));
        }
        Ok(d)
    }

    /// A concrete shortest path from `a` to `b` as a cell sequence including
    /// both endpoints. Ties are broken by the lowest next cell id, so the
    /// result is deterministic.
    pub fn sp_path(&self, a: CellId, b: CellId) -> Result<Vec<CellId>, GridError> {
        let to_b = self.sp_table(b)?;
        if to_b[a.idx()] == INF {
            return Err(GridError::Unreachable(a, b));
        }
        let mut path = vec![a];
        let mut cur = a;
        let mut guard = self.adj.len() + 2;
        while cur != b {
            let next = self.adj[cur.idx()]
                .iter()
                .find(|&&(n, w)| to_b[n.idx()] != INF && to_b[n.idx()] + w == to_b[cur.idx()])
                .map(|&(n, _)| n)
                .ok_or(GridError::Unreachable(a, b))?;
            path.push(next);
            cur = next;
            guard -= 1;
            if guard == 0 {
                // zero-weight cycles could stall the descent
                return Err(GridError::Unreachable(a, b));
            }
        }
        Ok(path)
    }

    /// Total distance along a concrete cell path (consecutive cells must be
    /// adjacent).
    pub fn path_dist(&self, cells: &[CellId]) -> Result<u32, GridError> {
        let mut total = 0;
        for pair in cells.windows(2) {
            total += self
                .edge_dist(pair[0], pair[1])
                .ok_or(GridError::NotAdjacent(pair[0], pair[1]))?;
        }
        Ok(total)
    }

    /// Drops the cached shortest-path tables. Scaling benchmarks use this to
    /// measure cold queries.
    pub fn clear_sp_cache(&self) {
        self.sp_cache.write().unwrap().clear();
    }

    /// Neighbors of `v` that are strictly closer to `dest` than `v` is,
    /// sorted by cell id.
    pub fn forward_neighbors(&self, v: CellId, dest: CellId) -> Result<Vec<CellId>, GridError> {
        self.check_cell(v)?;
        let to_dest = self.sp_table(dest)?;
        let dv = to_dest[v.idx()];
        Ok(self.adj[v.idx()]
            .iter()
            .filter(|&&(u, _)| to_dest[u.idx()] < dv)
            .map(|&(u, _)| u)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn g(k: u32) -> CellId {
        fixtures::g(k)
    }

    #[test]
    fn single_cell_grid_has_no_edges() {
        let g = build_grid(GridSpec::new(1, 1)).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.cell_count(), 1);
    }

    #[test]
    fn two_by_two_grid_has_six_edges() {
        // 4 orthogonal + 2 diagonal
        let g = build_grid(GridSpec::new(2, 2)).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn three_by_three_center_has_eight_neighbors() {
        let g = build_grid(GridSpec::new(3, 3)).unwrap();
        assert_eq!(g.neighbors(CellId(4)).len(), 8);
        let corner = g.neighbors(CellId(0)).len();
        assert_eq!(corner, 3);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_grid(GridSpec::new(0, 3)).is_err());
        assert!(build_grid(GridSpec::with_cell_size(2, 2, 0.0)).is_err());
    }

    #[test]
    fn demo_instance_shortest_paths() {
        let road = fixtures::demo_road();
        assert_eq!(road.shortest_path_len(g(1), g(6)).unwrap(), 4);
        assert_eq!(road.shortest_path_len(g(1), g(1)).unwrap(), 0);
        assert_eq!(road.shortest_path_len(g(2), g(6)).unwrap(), 5);
        // symmetry
        assert_eq!(road.shortest_path_len(g(6), g(1)).unwrap(), 4);
    }

    #[test]
    fn disconnected_edge_list_rejected() {
        let err = RoadGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)], 1.0).unwrap_err();
        assert!(matches!(err, GridError::Disconnected(2, 4)));
    }

    #[test]
    fn parse_edge_list_roundtrip() {
        let text = "# comment\ncells 3\n0 1 2\n1 2 1\n";
        let g = RoadGraph::parse_edge_list(text, 1.0).unwrap();
        assert_eq!(g.cell_count(), 3);
        assert_eq!(g.edge_dist(CellId(0), CellId(1)), Some(2));
        assert_eq!(g.shortest_path_len(CellId(0), CellId(2)).unwrap(), 3);
        assert!(RoadGraph::parse_edge_list("0 1 2\n", 1.0).is_err());
        assert!(RoadGraph::parse_edge_list("cells 2\n0 1\n", 1.0).is_err());
    }

    #[test]
    fn forward_neighbors_at_dest_is_empty() {
        let road = build_grid(GridSpec::new(4, 4)).unwrap();
        assert!(road.forward_neighbors(CellId(5), CellId(5)).unwrap().is_empty());
    }

    #[test]
    fn forward_neighbors_on_nine_by_seven_grid() {
        // 63-cell grid, 7 columns: the neighbors of g_9 are g_1, g_2, g_3,
        // g_8, g_10, g_15, g_16, g_17. With uniform edge weights the strictly
        // closer ones toward g_7 are g_3, g_10 and g_17; g_2 and g_16 tie with
        // g_9 at distance 5 and are excluded by the strict definition.
        let road = build_grid(GridSpec::new(9, 7)).unwrap();
        let nbrs: Vec<u32> = road.neighbors(g(9)).iter().map(|&(c, _)| c.0 + 1).collect();
        assert_eq!(nbrs, vec![1, 2, 3, 8, 10, 15, 16, 17]);
        let fwd = road.forward_neighbors(g(9), g(7)).unwrap();
        assert_eq!(fwd, vec![g(3), g(10), g(17)]);
    }

    /// Independent all-pairs oracle (Floyd-Warshall) for small graphs.
    fn floyd_warshall(road: &RoadGraph) -> Vec<Vec<u64>> {
        let m = road.cell_count() as usize;
        let big = u64::MAX / 4;
        let mut d = vec![vec![big; m]; m];
        for v in 0..m {
            d[v][v] = 0;
            for &(u, w) in road.neighbors(CellId(v as u32)) {
                d[v][u.idx()] = w as u64;
            }
        }
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn shortest_paths_match_floyd_warshall_oracle() {
        for road in [build_grid(GridSpec::new(5, 5)).unwrap(), fixtures::demo_road()] {
            let oracle = floyd_warshall(&road);
            let m = road.cell_count();
            for a in 0..m {
                for b in 0..m {
                    let got = road.shortest_path_len(CellId(a), CellId(b)).unwrap() as u64;
                    assert_eq!(got, oracle[a as usize][b as usize], "SP({a},{b})");
                }
            }
        }
    }

    #[test]
    fn forward_neighbors_strictly_closer_per_oracle() {
        let road = build_grid(GridSpec::new(5, 5)).unwrap();
        let oracle = floyd_warshall(&road);
        for v in 0..25 {
            for dest in 0..25 {
                for u in road.forward_neighbors(CellId(v), CellId(dest)).unwrap() {
                    assert!(
                        oracle[u.idx()][dest as usize] < oracle[v as usize][dest as usize],
                        "forward neighbor {u} of {v} toward {dest} not strictly closer"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_neighbor_count_bounded_by_five_up_to_ten_by_ten() {
        for n in 1..=10u32 {
            let road = build_grid(GridSpec::new(n, n)).unwrap();
            let m = road.cell_count();
            for v in 0..m {
                for dest in 0..m {
                    let fwd = road.forward_neighbors(CellId(v), CellId(dest)).unwrap();
                    assert!(fwd.len() <= 5, "{n}x{n} grid, v={v}, dest={dest}: {}", fwd.len());
                }
            }
        }
    }

    #[test]
    fn triangle_inequality_and_symmetry_hold() {
        let road = build_grid(GridSpec::new(4, 4)).unwrap();
        let m = road.cell_count();
        let sp = |a: u32, b: u32| road.shortest_path_len(CellId(a), CellId(b)).unwrap();
        for a in 0..m {
            for b in 0..m {
                assert_eq!(sp(a, b), sp(b, a));
                for c in 0..m {
                    assert!(sp(a, c) <= sp(a, b) + sp(b, c));
                }
            }
        }
    }

    #[test]
    fn sp_path_is_a_shortest_path() {
        let road = build_grid(GridSpec::new(5, 5)).unwrap();
        for (a, b) in [(0u32, 24u32), (3, 20), (7, 7), (12, 4)] {
            let path = road.sp_path(CellId(a), CellId(b)).unwrap();
            assert_eq!(path.first(), Some(&CellId(a)));
            assert_eq!(path.last(), Some(&CellId(b)));
            let dist = road.path_dist(&path).unwrap();
            assert_eq!(dist, road.shortest_path_len(CellId(a), CellId(b)).unwrap());
        }
    }
}
