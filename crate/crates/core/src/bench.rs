//! Scaling measurements for route queries: cold-cache DAG construction plus
//! solve, at a fixed trip distance (hence fixed length budget), over growing
//! grids.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::RequestGraph;
use crate::grid::{build_grid, CellId, GridSpec};
use crate::route::{build_dag, dp_solve};

#[derive(Clone, Copy, Debug)]
pub struct BenchPoint {
    pub cells: u32,
    pub median_us: f64,
    pub max_us: f64,
}

/// Times full route queries (shortest-path table, DAG, solve) on `n x n`
/// grids. Sources and destinations are spread deterministically and kept a
/// fixed grid distance apart, and the shortest-path cache is cleared before
/// each query so every sample pays the per-query cost.
pub fn route_query_scaling(sizes: &[u32], queries_per_size: usize, seed: u64) -> Vec<BenchPoint> {
    sizes
        .iter()
        .map(|&n| {
            assert!(n >= 9, "grids below 9x9 cannot host the fixed trip offset");
            let road = build_grid(GridSpec::new(n, n)).expect("valid grid");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
            let mut req = RequestGraph::zero();
            for c in 0..road.cell_count() {
                for &(nb, _) in road.neighbors(CellId(c)) {
                    req.add(CellId(c), nb, rng.random_range(0.0..2.0));
                }
            }
            let offset = 8u32;
            let margin = n - offset;
            let mut samples: Vec<f64> = (0..queries_per_size)
                .map(|q| {
                    let r = (q as u32 * 7 + 1) % margin;
                    let c = (q as u32 * 5 + 2) % margin;
                    let source = CellId(r * n + c);
                    let dest = CellId((r + offset) * n + (c + offset));
                    road.clear_sp_cache();
                    let t0 = Instant::now();
                    let dag = build_dag(&road, &req, source, dest).expect("dag");
                    let route = dp_solve(&dag, &road, 1.5).expect("solve");
                    let us = t0.elapsed().as_secs_f64() * 1e6;
                    assert_eq!(*route.cells.last().unwrap(), dest);
                    us
                })
                .collect();
            samples.sort_by(f64::total_cmp);
            BenchPoint {
                cells: n * n,
                median_us: samples[samples.len() / 2],
                max_us: *samples.last().unwrap(),
            }
        })
        .collect()
}

/// Coefficient of determination of the least-squares line through the
/// points; 1 means a perfect linear fit.
pub fn linear_r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    (sxy * sxy) / (sxx * syy)
}
