//! Route recommendation: forward-edge DAG construction and the
//! detour-constrained maximum-expected-requests path solved by dynamic
//! programming.
//!
//! Given a driver cell, the destination is the cell with the most expected
//! requests from it. The request graph is then restricted to forward edges
//! between road-adjacent cells, which yields a DAG rooted at the driver. On
//! that DAG the solver maximizes the sum of consecutive edge weights over all
//! paths whose every prefix keeps the source-to-destination rider within its
//! detour threshold, indexing states by accumulated path length.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::demand::RequestGraph;
use crate::grid::{CellId, GridError, RoadGraph};

/// Slack for the boundary of the detour comparison, so that an exactly-tight
/// ratio stays feasible under floating-point rounding of `t_d * sp`.
pub const DETOUR_EPS: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum RouteError {
    #[error("no demand originates at cell {0}, cannot pick a destination")]
    NoDestination(CellId),
    #[error("trip from {0} to itself is degenerate")]
    DegenerateTrip(CellId),
    #[error("shortest source-destination distance is zero")]
    ZeroShortestPath,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The destination with the most expected requests from `source`, ties broken
/// by the lowest cell id. All-zero demand from the source is an error; the
/// caller falls back to relocation or idling.
pub fn select_destination(req: &RequestGraph, source: CellId) -> Result<CellId, RouteError> {
    let mut best: Option<(CellId, f64)> = None;
    for (dest, w) in req.row(source) {
        if w <= 0.0 || dest == source {
            continue;
        }
        match best {
            Some((_, bw)) if w <= bw => {}
            _ => best = Some((dest, w)),
        }
    }
    best.map(|(d, _)| d).ok_or(RouteError::NoDestination(source))
}

/// An edge of the forward DAG: road-adjacent cells with strictly decreasing
/// shortest-path distance to the trip destination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DagEdge {
    pub from: CellId,
    pub to: CellId,
    /// Expected requests from `from` to `to` (the request-graph weight).
    pub requests: f64,
    /// Road distance of the edge, always positive on a DAG edge.
    pub dist: u32,
}

/// Forward-edge request DAG between a source and a destination cell.
#[derive(Clone, Debug)]
pub struct Dag {
    pub source: CellId,
    pub dest: CellId,
    /// `|SP(source, dest)|` on the road graph.
    pub sp_source_dest: u32,
    vertices: Vec<CellId>,
    edges: Vec<DagEdge>,
    out: BTreeMap<CellId, Vec<usize>>,
}

impl Dag {
    pub fn vertices(&self) -> &[CellId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn contains_vertex(&self, v: CellId) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn out_edges(&self, v: CellId) -> impl Iterator<Item = &DagEdge> + '_ {
        self.out
            .get(&v)
            .into_iter()
            .flat_map(|idx| idx.iter().map(|&i| &self.edges[i]))
    }

    /// Request weight of the edge `(u, v)` if it is in the DAG.
    pub fn edge_requests(&self, u: CellId, v: CellId) -> Option<f64> {
        self.out_edges(u).find(|e| e.to == v).map(|e| e.requests)
    }
}

/// Builds the forward DAG: vertices are the cells no farther from the
/// destination than the source is, and edges connect road-adjacent vertices
/// with strictly decreasing distance to the destination. Each edge carries
/// the request-graph weight and the road distance.
pub fn build_dag(
    road: &RoadGraph,
    req: &RequestGraph,
    source: CellId,
    dest: CellId,
) -> Result<Dag, RouteError> {
    if source == dest {
        return Err(RouteError::DegenerateTrip(source));
    }
    let to_dest = road.sp_table(dest)?;
    let radius = to_dest[source.idx()];
    if radius == u32::MAX {
        return Err(RouteError::Grid(GridError::Unreachable(source, dest)));
    }
    let mut vertices = Vec::new();
    for c in 0..road.cell_count() {
        if to_dest[c as usize] <= radius {
            vertices.push(CellId(c));
        }
    }
    let mut edges = Vec::new();
    let mut out: BTreeMap<CellId, Vec<usize>> = BTreeMap::new();
    for &u in &vertices {
        for &(v, dist) in road.neighbors(u) {
            if to_dest[v.idx()] <= radius && to_dest[v.idx()] < to_dest[u.idx()] {
                out.entry(u).or_default().push(edges.len());
                edges.push(DagEdge {
                    from: u,
                    to: v,
                    requests: req.weight(u, v),
                    dist,
                });
            }
        }
    }
    Ok(Dag {
        source,
        dest,
        sp_source_dest: radius,
        vertices,
        edges,
        out,
    })
}

/// Per-edge feasibility of the source-to-destination rider: the edge of
/// length `x`, taken after `travelled` distance, keeps the rider's detour
/// ratio within `t_d` provided the remaining leg is completed by shortest
/// path.
pub fn edge_feasible(
    x: u32,
    travelled: u32,
    sp_next_to_dest: u32,
    sp_trip: u32,
    t_d: f64,
) -> Result<bool, RouteError> {
    if sp_trip == 0 {
        return Err(RouteError::ZeroShortestPath);
    }
    let lhs = (x + travelled + sp_next_to_dest) as f64;
    Ok(lhs <= t_d * sp_trip as f64 + DETOUR_EPS)
}

/// A recommended route: a sequence of road-adjacent cells with its total
/// distance and the expected requests collected along its consecutive edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub cells: Vec<CellId>,
    pub total_dist: u32,
    pub expected_requests: f64,
}

impl Route {
    pub fn start(&self) -> CellId {
        self.cells[0]
    }

    pub fn end(&self) -> CellId {
        *self.cells.last().unwrap()
    }
}

/// One solver state: the best expected requests reaching a cell with an exact
/// accumulated path length, plus the predecessor state for backtracking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpEntry {
    pub value: f64,
    pub pred: Option<(CellId, u32)>,
}

/// The solver table over `(cell, length)` states. Unreachable states are
/// simply absent.
#[derive(Clone, Debug, Default)]
pub struct DpTable {
    pub length_budget: u32,
    entries: BTreeMap<(u32, CellId), DpEntry>,
}

impl DpTable {
    pub fn get(&self, cell: CellId, k: u32) -> Option<&DpEntry> {
        self.entries.get(&(k, cell))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best value over all lengths at a cell, with the smallest such length.
    pub fn best_at(&self, cell: CellId) -> Option<(u32, DpEntry)> {
        let mut best: Option<(u32, DpEntry)> = None;
        for (&(k, c), &e) in &self.entries {
            if c == cell {
                match best {
                    Some((_, b)) if e.value <= b.value => {}
                    _ => best = Some((k, e)),
                }
            }
        }
        best
    }

    /// Debug dump as CSV `cell,k,value,pred_cell,pred_k`, rows sorted by
    /// `(cell, k)`.
    pub fn dump_csv(&self) -> String {
        let mut rows: Vec<(CellId, u32, DpEntry)> =
            self.entries.iter().map(|(&(k, c), &e)| (c, k, e)).collect();
        rows.sort_by_key(|&(c, k, _)| (c, k));
        let mut out = String::from("cell,k,value,pred_cell,pred_k\n");
        for (c, k, e) in rows {
            match e.pred {
                Some((pc, pk)) => writeln!(out, "{c},{k},{},{pc},{pk}", e.value).unwrap(),
                None => writeln!(out, "{c},{k},{},,", e.value).unwrap(),
            }
        }
        out
    }
}

/// Solves the detour-constrained maximum-expected-requests path on the DAG
/// and returns the recommended route.
pub fn dp_solve(dag: &Dag, road: &RoadGraph, t_d: f64) -> Result<Route, RouteError> {
    dp_solve_full(dag, road, t_d).map(|(route, _)| route)
}

/// Like [`dp_solve`] but also returns the solver table for inspection.
///
/// States `(v, k)` with `k <= floor(t_d * |SP(source, dest)|)` are expanded
/// in ascending length order; an edge is taken only if it keeps the
/// source-destination rider feasible per [`edge_feasible`]. Value ties prefer
/// the lower predecessor cell id, then the smaller predecessor length. The
/// route is backtracked from the best destination state (smallest length on
/// ties). If no destination state is reachable the shortest path is
/// recommended instead.
pub fn dp_solve_full(dag: &Dag, road: &RoadGraph, t_d: f64) -> Result<(Route, DpTable), RouteError> {
    debug_assert!(t_d >= 1.0, "detour threshold below 1 is unsatisfiable");
    let sp_trip = dag.sp_source_dest;
    if sp_trip == 0 {
        return Err(RouteError::ZeroShortestPath);
    }
    let to_dest = road.sp_table(dag.dest)?;
    let budget = (t_d * sp_trip as f64 + DETOUR_EPS).floor() as u32;
    let mut table = DpTable {
        length_budget: budget,
        entries: BTreeMap::new(),
    };
    table.entries.insert(
        (0, dag.source),
        DpEntry {
            value: 0.0,
            pred: None,
        },
    );

    for k in 0..=budget {
        // states at this exact length, ascending by cell id
        let frontier: Vec<(CellId, f64)> = table
            .entries
            .range((k, CellId(0))..=(k, CellId(u32::MAX)))
            .map(|(&(_, c), e)| (c, e.value))
            .collect();
        for (u, value) in frontier {
            for edge in dag.out_edges(u) {
                if !edge_feasible(edge.dist, k, to_dest[edge.to.idx()], sp_trip, t_d)? {
                    continue;
                }
                let nk = k + edge.dist;
                if nk > budget {
                    continue;
                }
                let cand = DpEntry {
                    value: value + edge.requests,
                    pred: Some((u, k)),
                };
                table
                    .entries
                    .entry((nk, edge.to))
                    .and_modify(|e| {
                        let replace = cand.value > e.value
                            || (cand.value == e.value && cand.pred < e.pred);
                        if replace {
                            *e = cand;
                        }
                    })
                    .or_insert(cand);
            }
        }
    }

    // best destination state; ties prefer the smallest length
    let mut best: Option<(u32, DpEntry)> = None;
    for k in 0..=budget {
        if let Some(&e) = table.entries.get(&(k, dag.dest)) {
            match best {
                Some((_, b)) if e.value <= b.value => {}
                _ => best = Some((k, e)),
            }
        }
    }

    let route = match best {
        Some((k, entry)) => {
            let mut cells = vec![dag.dest];
            let mut cursor = (dag.dest, k);
            let mut total = 0;
            while let Some(&e) = table.entries.get(&(cursor.1, cursor.0)) {
                let Some((pc, pk)) = e.pred else { break };
                total += cursor.1 - pk;
                cells.push(pc);
                cursor = (pc, pk);
            }
            cells.reverse();
            debug_assert_eq!(cells[0], dag.source);
            Route {
                cells,
                total_dist: total,
                expected_requests: entry.value,
            }
        }
        None => shortest_path_fallback(dag, road)?,
    };
    Ok((route, table))
}

/// Fallback recommendation: the shortest path, which never violates the
/// rider's threshold since its ratio is exactly 1.
fn shortest_path_fallback(dag: &Dag, road: &RoadGraph) -> Result<Route, RouteError> {
    let cells = road.sp_path(dag.source, dag.dest)?;
    let total_dist = road.path_dist(&cells)?;
    let expected_requests = cells
        .windows(2)
        .map(|w| dag.edge_requests(w[0], w[1]).unwrap_or(0.0))
        .sum();
    Ok(Route {
        cells,
        total_dist,
        expected_requests,
    })
}

/// Ratio of the distance a rider actually travels between its endpoints to
/// the shortest distance between them.
pub fn detour_ratio(route_dist_between: u32, sp: u32) -> Result<f64, RouteError> {
    if sp == 0 {
        return Err(RouteError::ZeroShortestPath);
    }
    Ok(route_dist_between as f64 / sp as f64)
}

/// Expected requests of a path counted over all ordered vertex pairs along
/// it: the reporting metric, as opposed to the consecutive-edge objective the
/// solver maximizes.
pub fn path_request_count(req: &RequestGraph, cells: &[CellId]) -> f64 {
    let mut total = 0.0;
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            total += req.weight(a, b);
        }
    }
    total
}
