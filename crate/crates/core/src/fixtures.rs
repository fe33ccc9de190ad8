//! Bundled worked-example instances, scripted scenarios and canned workload
//! configs. These back the golden regression command and the acceptance
//! suite.

use crate::config::{DemandSpec, GridSource, Placement, Policy, ScriptedOrder, WorldConfig};
use crate::demand::{Hotspot, RequestGraph, SynthProfile};
use crate::grid::{CellId, GridSpec, RoadGraph};
use crate::route::{
    build_dag, detour_ratio, dp_solve_full, path_request_count,
};
use crate::sim::{self, SimError};

/// 8-cell road instance of the worked examples.
pub const DEMO_ROAD: &str = include_str!("../fixtures/demo_road.txt");
/// Request counts over the 8-cell instance.
pub const DEMO_REQUESTS: &str = include_str!("../fixtures/demo_requests.txt");
/// Expected solver table and route on the 8-cell instance.
pub const DP_TABLE_EXPECTED: &str = include_str!("../fixtures/dp_table.txt");
/// Expected per-path request counts and feasibility on the 8-cell instance.
pub const PATH_COUNTS_EXPECTED: &str = include_str!("../fixtures/path_counts.txt");
/// Expected event log of the scripted acceptance walkthrough.
pub const WALKTHROUGH_EVENTS_EXPECTED: &str = include_str!("../fixtures/walkthrough_events.txt");

/// 1-based cell label used throughout the worked examples; `g(1)` is cell 0.
pub fn g(k: u32) -> CellId {
    debug_assert!(k >= 1);
    CellId(k - 1)
}

pub fn demo_road() -> RoadGraph {
    RoadGraph::parse_edge_list(DEMO_ROAD, 1.24).expect("bundled road fixture parses")
}

pub fn demo_requests() -> RequestGraph {
    RequestGraph::parse_request_list(DEMO_REQUESTS).expect("bundled request fixture parses")
}

/// The three candidate paths between g(1) and g(6) discussed on the demo
/// instance.
pub fn demo_paths() -> [Vec<CellId>; 3] {
    [
        vec![g(1), g(2), g(3), g(4), g(6)],
        vec![g(1), g(5), g(6)],
        vec![g(1), g(7), g(8), g(6)],
    ]
}

/// The seven orders of the scripted acceptance walkthrough, all with
/// threshold 1.5.
pub fn walkthrough_orders() -> Vec<ScriptedOrder> {
    [(1, 6), (1, 6), (1, 7), (7, 1), (7, 8), (8, 6), (8, 6)]
        .into_iter()
        .map(|(from, to)| ScriptedOrder {
            slice: 0,
            from: from - 1,
            to: to - 1,
            t_d: 1.5,
        })
        .collect()
}

/// One driver at g(1) on the demo instance, capacity 3, serving the seven
/// scripted orders within a single slice.
pub fn walkthrough_config() -> WorldConfig {
    let mut cfg = WorldConfig::new(
        GridSource::EdgeList {
            text: DEMO_ROAD.to_string(),
        },
        1,
        DemandSpec::Scripted {
            request_list: DEMO_REQUESTS.to_string(),
            orders: walkthrough_orders(),
        },
    );
    cfg.placement = Placement::Cells(vec![0]);
    cfg.capacity = 3;
    cfg.duration_slices = 1;
    cfg
}

/// Expected event-log lines (without header) of the walkthrough scenario.
pub fn walkthrough_expected_events() -> Vec<String> {
    WALKTHROUGH_EVENTS_EXPECTED
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn join_cells(cells: &[CellId]) -> String {
    cells
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Renders the solver table and recommended route of the demo instance in
/// the golden-fixture format.
pub fn dp_table_text() -> Result<String, SimError> {
    let road = demo_road();
    let req = demo_requests();
    let dag = build_dag(&road, &req, g(1), g(6))?;
    let (route, table) = dp_solve_full(&dag, &road, 1.5)?;
    Ok(format!(
        "{}route,{}\nvalue,{}\ndist,{}\n",
        table.dump_csv(),
        join_cells(&route.cells),
        route.expected_requests,
        route.total_dist
    ))
}

/// Renders per-path request counts, detours and the recommendation of the
/// demo instance in the golden-fixture format.
pub fn path_counts_text() -> Result<String, SimError> {
    let road = demo_road();
    let req = demo_requests();
    let t_d = 1.5;
    let mut out = String::from("path,cells,requests,dist,detour,feasible\n");
    for (name, path) in ["P1", "P2", "P3"].iter().zip(demo_paths()) {
        let requests = path_request_count(&req, &path);
        let dist = road.path_dist(&path)?;
        let sp = road.shortest_path_len(path[0], *path.last().unwrap())?;
        let detour = detour_ratio(dist, sp)?;
        let feasible = if detour <= t_d { "yes" } else { "no" };
        out.push_str(&format!(
            "{name},{},{requests},{dist},{detour},{feasible}\n",
            join_cells(&path)
        ));
    }
    let dag = build_dag(&road, &req, g(1), g(6))?;
    let (route, _) = dp_solve_full(&dag, &road, t_d)?;
    out.push_str(&format!("recommended,{}\n", join_cells(&route.cells)));
    Ok(out)
}

/// Runs the walkthrough scenario and renders its event log.
pub fn walkthrough_events_text() -> Result<String, SimError> {
    let report = sim::run(walkthrough_config())?;
    Ok(sim::events_csv(&report.events))
}

/// Symmetric two-hotspot workload: 16x16 grid, 20 drivers, 32 slices. The
/// demand field is a pair of equal Gaussian bumps, so income disparity under
/// plain dispatch comes purely from where drivers start.
pub fn symmetric_workload(seed: u64, policy: Policy, relocate_fraction: f64) -> WorldConfig {
    let spec = GridSpec::new(16, 16);
    let hotspot = |row: u32, col: u32| Hotspot {
        cell: spec.cell_at(row, col),
        rate_peak: 0.35,
        attract_peak: 1.0,
        sigma: 2.0,
    };
    let profile = SynthProfile {
        grid: spec,
        base_rate: 0.002,
        base_attraction: 0.05,
        hotspots: vec![hotspot(4, 4), hotspot(11, 11)],
        tod_curve: vec![],
        extra_pairs: vec![],
        trip_radius: Some(3.0),
    };
    let mut cfg = WorldConfig::new(GridSource::Grid(spec), 20, DemandSpec::Synthetic(profile));
    cfg.seed = seed;
    cfg.duration_slices = 32;
    cfg.policy = policy;
    cfg.relocation.fraction = relocate_fraction;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_parse() {
        let road = demo_road();
        assert_eq!(road.cell_count(), 8);
        assert_eq!(road.edge_count(), 9);
        let req = demo_requests();
        assert_eq!(req.weight(g(1), g(6)), 2.0);
        walkthrough_config().validate().unwrap();
        symmetric_workload(0, Policy::FairnessOn, 0.7).validate().unwrap();
    }

    #[test]
    fn golden_texts_match_their_fixtures() {
        assert_eq!(dp_table_text().unwrap(), DP_TABLE_EXPECTED);
        assert_eq!(path_counts_text().unwrap(), PATH_COUNTS_EXPECTED);
        assert_eq!(walkthrough_events_text().unwrap(), WALKTHROUGH_EVENTS_EXPECTED);
    }
}
