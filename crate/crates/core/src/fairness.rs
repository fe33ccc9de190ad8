//! Fairness layer: Lorenz/Gini income metrics, weighted proportional-fairness
//! objective, priority ordering for simultaneous recommendations, and the
//! destination-aware relocation policy.

use thiserror::Error;

use crate::demand::RequestGraph;
use crate::grid::{CellId, RoadGraph};
use crate::DriverId;

/// Floor applied to weights and to log arguments: the proportional-fairness
/// objective is undefined at zero.
pub const UTILITY_EPSILON: f64 = 1e-6;

#[derive(Error, Debug, PartialEq)]
pub enum FairnessError {
    #[error("baseline value is zero, improvement is undefined")]
    ZeroBaseline,
}

/// Per-driver utility-per-hour rates captured between ticks.
#[derive(Clone, Debug, Default)]
pub struct IncomeSnapshot {
    pub taken_at_minutes: u64,
    pub rates: Vec<(DriverId, f64)>,
}

impl IncomeSnapshot {
    pub fn rate(&self, driver: DriverId) -> Option<f64> {
        self.rates.iter().find(|&&(d, _)| d == driver).map(|&(_, r)| r)
    }

    /// Drivers sorted ascending by rate, ties by driver id.
    fn ranked(&self) -> Vec<DriverId> {
        let mut v: Vec<(DriverId, f64)> = self.rates.clone();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v.into_iter().map(|(d, _)| d).collect()
    }
}

/// Lorenz curve points: cumulative population share against cumulative income
/// share, drivers sorted ascending by income. Negative incomes are clamped to
/// zero for curve purposes. The first point is (0, 0) and, whenever the total
/// income is positive, the last is (1, 1). A zero total degenerates to the
/// equal-shares diagonal.
pub fn lorenz(incomes: &[f64]) -> Vec<(f64, f64)> {
    assert!(!incomes.is_empty(), "lorenz of an empty population");
    let n = incomes.len() as f64;
    let mut xs: Vec<f64> = incomes.iter().map(|&x| x.max(0.0)).collect();
    xs.sort_by(f64::total_cmp);
    let total: f64 = xs.iter().sum();
    let mut points = Vec::with_capacity(xs.len() + 1);
    points.push((0.0, 0.0));
    if total <= 0.0 {
        for i in 1..=xs.len() {
            points.push((i as f64 / n, i as f64 / n));
        }
        return points;
    }
    let mut cum = 0.0;
    for (i, x) in xs.iter().enumerate() {
        cum += x;
        points.push(((i + 1) as f64 / n, cum / total));
    }
    points
}

/// Gini coefficient in `[0, 1]` via the mean-absolute-difference form
/// `sum_ij |x_i - x_j| / (2 n^2 mean)`, which equals the Lorenz-area ratio
/// for discrete data. Negative incomes are clamped to zero; an all-zero
/// population has coefficient 0.
pub fn gini(incomes: &[f64]) -> f64 {
    assert!(!incomes.is_empty(), "gini of an empty population");
    let xs: Vec<f64> = incomes.iter().map(|&x| x.max(0.0)).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let mut abs_diff = 0.0;
    for &a in &xs {
        for &b in &xs {
            abs_diff += (a - b).abs();
        }
    }
    abs_diff / (2.0 * n * n * mean)
}

/// Per-driver demand weights for the weighted proportional-fairness
/// objective. The optimum allocates utility shares proportional to weights.
#[derive(Clone, Debug)]
pub struct FairnessWeights {
    pub weights: Vec<(DriverId, f64)>,
}

impl FairnessWeights {
    pub fn uniform(drivers: impl IntoIterator<Item = DriverId>) -> FairnessWeights {
        FairnessWeights {
            weights: drivers.into_iter().map(|d| (d, 1.0)).collect(),
        }
    }

    /// Normalized target shares `w_i / sum_j w_j`; they sum to 1.
    pub fn target_shares(&self) -> Vec<(DriverId, f64)> {
        let total: f64 = self.weights.iter().map(|&(_, w)| w).sum();
        self.weights
            .iter()
            .map(|&(d, w)| (d, w / total))
            .collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.weights.iter().map(|&(_, w)| w).collect()
    }
}

/// One observation of a driver's utility-per-hour within an hour of day.
#[derive(Clone, Copy, Debug)]
pub struct IncomeSample {
    pub driver: DriverId,
    pub hour_of_day: u32,
    pub rate: f64,
}

/// Demand weight per driver, estimated as the mean utility-per-hour of all
/// drivers active in that driver's working hour. Drivers whose hour has no
/// samples get weight 1; all weights are floored at a small epsilon.
pub fn hour_weights(samples: &[IncomeSample], drivers: &[(DriverId, u32)]) -> FairnessWeights {
    let mean_for_hour = |hour: u32| -> Option<f64> {
        let rates: Vec<f64> = samples
            .iter()
            .filter(|s| s.hour_of_day == hour)
            .map(|s| s.rate)
            .collect();
        if rates.is_empty() {
            None
        } else {
            Some(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    };
    let weights = drivers
        .iter()
        .map(|&(d, hour)| {
            let w = mean_for_hour(hour).unwrap_or(1.0);
            (d, w.max(UTILITY_EPSILON))
        })
        .collect();
    FairnessWeights { weights }
}

/// Weighted proportional-fairness objective `sum_i w_i * log(u_i)`, with
/// utilities floored at epsilon. This is a reporting metric; the system
/// optimizes it indirectly through priority scheduling and relocation.
pub fn fair_objective(utilities: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(utilities.len(), weights.len());
    utilities
        .iter()
        .zip(weights)
        .map(|(&u, &w)| w * u.max(UTILITY_EPSILON).ln())
        .sum()
}

/// Serves simultaneous recommendation requests lowest-earner-first: drivers
/// ascending by utility-per-hour, ties by lower driver id. The same order
/// also sequences the atomic order claims within a tick.
pub fn priority_order(snapshot: &IncomeSnapshot) -> Vec<DriverId> {
    assert!(!snapshot.rates.is_empty(), "priority order of an empty fleet");
    snapshot.ranked()
}

/// Relocation policy knobs.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct RelocationParams {
    /// Fraction of the fleet (lowest earners) eligible for relocation.
    pub fraction: f64,
    /// Minimum total future outgoing demand, over the destinations of a
    /// candidate cell's predicted requests, for the candidate to qualify.
    pub future_threshold: f64,
}

impl Default for RelocationParams {
    fn default() -> RelocationParams {
        RelocationParams {
            fraction: 0.7,
            future_threshold: 1.0,
        }
    }
}

/// Picks the relocation target for an idle driver, or `None` to stay put.
///
/// Drivers ranked above the bottom `fraction` of the fleet by utility-per-hour
/// are never relocated. For the rest, the candidate window is the driver's
/// current cell plus its adjacent cells, sorted descending by predicted
/// outgoing requests in the current slice (ties by lower cell id). The first
/// candidate whose predicted requests lead to destinations with at least
/// `future_threshold` total outgoing demand in the next slice wins. If none
/// qualifies the driver stays.
pub fn relocate(
    driver: DriverId,
    current: CellId,
    snapshot: &IncomeSnapshot,
    road: &RoadGraph,
    pred_now: &RequestGraph,
    pred_next: &RequestGraph,
    params: &RelocationParams,
) -> Option<CellId> {
    let ranked = snapshot.ranked();
    let n = ranked.len();
    let pos = ranked.iter().position(|&d| d == driver)?;
    if (pos as f64) >= params.fraction * n as f64 {
        return None;
    }

    let mut window: Vec<CellId> = vec![current];
    window.extend(road.neighbors(current).iter().map(|&(c, _)| c));
    window.sort_by(|&a, &b| {
        pred_now
            .outgoing_total(b)
            .total_cmp(&pred_now.outgoing_total(a))
            .then(a.cmp(&b))
    });

    for &candidate in &window {
        let future: f64 = pred_now
            .row(candidate)
            .filter(|&(_, w)| w > 0.0)
            .map(|(dest, _)| pred_next.outgoing_total(dest))
            .sum();
        if future >= params.future_threshold {
            return Some(candidate);
        }
    }
    None
}

/// Percentage improvement of `p` over baseline `b`.
pub fn improvement(p: f64, b: f64) -> Result<f64, FairnessError> {
    if b == 0.0 {
        return Err(FairnessError::ZeroBaseline);
    }
    Ok((p - b) / b * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::RequestGraph;
    use crate::grid::{build_grid, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(i: u32) -> DriverId {
        DriverId(i)
    }

    #[test]
    fn lorenz_cumulative_points() {
        let pts = lorenz(&[1.0, 1.0, 2.0]);
        assert_eq!(pts[0], (0.0, 0.0));
        let expect = [(1.0 / 3.0, 0.25), (2.0 / 3.0, 0.5), (1.0, 1.0)];
        for (got, want) in pts[1..].iter().zip(expect) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn lorenz_equal_incomes_is_diagonal() {
        for pts in [lorenz(&[5.0; 4]), lorenz(&[0.0; 4])] {
            for (p, i) in pts.iter().zip(0..) {
                assert!((p.0 - i as f64 / 4.0).abs() < 1e-12);
                assert!((p.1 - p.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lorenz_top_three_of_ten_holding_seventy_percent() {
        // 7 drivers share 30% equally, 3 share 70% equally
        let mut incomes = vec![30.0 / 7.0; 7];
        incomes.extend([70.0 / 3.0; 3]);
        let pts = lorenz(&incomes);
        let at_70 = pts.iter().find(|p| (p.0 - 0.7).abs() < 1e-12).unwrap();
        assert!((at_70.1 - 0.30).abs() < 1e-9);
    }

    #[test]
    fn lorenz_is_nondecreasing_and_convex() {
        let pts = lorenz(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0]);
        let mut prev_inc = 0.0;
        for w in pts.windows(2) {
            let inc = w[1].1 - w[0].1;
            assert!(inc >= -1e-12);
            assert!(inc + 1e-12 >= prev_inc);
            prev_inc = inc;
        }
    }

    #[test]
    fn gini_equal_is_zero() {
        assert_eq!(gini(&[4.2; 8]), 0.0);
        assert_eq!(gini(&[0.0; 3]), 0.0);
    }

    #[test]
    fn gini_of_zero_one_is_half() {
        assert!((gini(&[0.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    /// Independent oracle: trapezoid integration of the Lorenz curve,
    /// G = 1 - 2 * area under the curve.
    fn gini_from_lorenz_area(incomes: &[f64]) -> f64 {
        let pts = lorenz(incomes);
        let mut area = 0.0;
        for w in pts.windows(2) {
            area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
        }
        1.0 - 2.0 * area
    }

    #[test]
    fn gini_matches_lorenz_area_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
            let a = gini(&xs);
            let b = gini_from_lorenz_area(&xs);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn gini_scale_and_permutation_invariant() {
        let xs = [1.0, 5.0, 2.0, 8.0];
        let scaled: Vec<f64> = xs.iter().map(|x| x * 3.7).collect();
        let mut permuted = xs.to_vec();
        permuted.reverse();
        assert!((gini(&xs) - gini(&scaled)).abs() < 1e-12);
        assert!((gini(&xs) - gini(&permuted)).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_give_equal_target_shares() {
        let w = FairnessWeights::uniform((0..4).map(d));
        for (_, s) in w.target_shares() {
            assert!((s - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_one_three_give_quarter_shares() {
        let w = FairnessWeights {
            weights: vec![(d(0), 1.0), (d(1), 3.0)],
        };
        let shares = w.target_shares();
        assert!((shares[0].1 - 0.25).abs() < 1e-12);
        assert!((shares[1].1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn target_shares_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..30);
            let w = FairnessWeights {
                weights: (0..n).map(|i| (d(i), rng.random_range(0.01..10.0))).collect(),
            };
            let total: f64 = w.target_shares().iter().map(|&(_, s)| s).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hour_weights_defaults_and_means() {
        // all drivers share one hour: equal weights, targets 1/n
        let samples = vec![
            IncomeSample { driver: d(0), hour_of_day: 9, rate: 10.0 },
            IncomeSample { driver: d(1), hour_of_day: 9, rate: 20.0 },
        ];
        let w = hour_weights(&samples, &[(d(0), 9), (d(1), 9)]);
        assert_eq!(w.weights[0].1, w.weights[1].1);
        let shares = w.target_shares();
        assert!((shares[0].1 - 0.5).abs() < 1e-12);

        // empty history: uniform weight 1
        let w = hour_weights(&[], &[(d(0), 8), (d(1), 17)]);
        assert!(w.weights.iter().all(|&(_, x)| x == 1.0));
    }

    #[test]
    fn objective_single_driver_log_e() {
        let u = std::f64::consts::E;
        assert!((fair_objective(&[u], &[1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_split_scores_higher_than_unequal() {
        let w = [1.0, 1.0];
        assert!(fair_objective(&[5.0, 5.0], &w) > fair_objective(&[9.0, 1.0], &w));
    }

    #[test]
    fn weighted_optimum_is_proportional_split() {
        // utilities at target shares of a fixed total beat random same-total
        // splits
        let weights = [1.0, 2.0, 3.0, 4.0];
        let total = 100.0;
        let wsum: f64 = weights.iter().sum();
        let optimal: Vec<f64> = weights.iter().map(|w| total * w / wsum).collect();
        let best = fair_objective(&optimal, &weights);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let mut cuts: Vec<f64> = (0..weights.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let csum: f64 = cuts.iter().sum();
            cuts.iter_mut().for_each(|c| *c *= total / csum);
            assert!(fair_objective(&cuts, &weights) <= best + 1e-9);
        }
    }

    #[test]
    fn priority_sorts_ascending_by_rate() {
        let snap = IncomeSnapshot {
            taken_at_minutes: 0,
            rates: vec![(d(0), 5.0), (d(1), 2.0), (d(2), 9.0)],
        };
        assert_eq!(priority_order(&snap), vec![d(1), d(0), d(2)]);
    }

    #[test]
    fn priority_ties_break_by_driver_id() {
        let snap = IncomeSnapshot {
            taken_at_minutes: 0,
            rates: vec![(d(2), 1.0), (d(0), 1.0), (d(1), 1.0)],
        };
        assert_eq!(priority_order(&snap), vec![d(0), d(1), d(2)]);
    }

    #[test]
    fn priority_is_a_permutation_with_argmin_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..20u32);
            let snap = IncomeSnapshot {
                taken_at_minutes: 0,
                rates: (0..n).map(|i| (d(i), rng.random_range(-5.0..50.0))).collect(),
            };
            let order = priority_order(&snap);
            let mut sorted = order.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).map(d).collect::<Vec<_>>());
            let min = snap
                .rates
                .iter()
                .cloned()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(order[0], min.0);
        }
    }

    fn snapshot_of(rates: &[f64]) -> IncomeSnapshot {
        IncomeSnapshot {
            taken_at_minutes: 0,
            rates: rates.iter().enumerate().map(|(i, &r)| (d(i as u32), r)).collect(),
        }
    }

    #[test]
    fn top_earners_are_not_relocated() {
        let road = build_grid(GridSpec::new(3, 3)).unwrap();
        let mut now = RequestGraph::zero();
        now.add(CellId(4), CellId(0), 10.0);
        let mut next = RequestGraph::zero();
        next.add(CellId(0), CellId(3), 2.0);
        let snap = snapshot_of(&[1.0, 2.0, 3.0, 4.0]);
        // driver 3 is in the top 30% of 4 drivers
        let got = relocate(
            d(3),
            CellId(4),
            &snap,
            &road,
            &now,
            &next,
            &RelocationParams::default(),
        );
        assert_eq!(got, None);
        // driver 0 is in the bottom 70% and the window has demand with a
        // live future
        let got = relocate(
            d(0),
            CellId(4),
            &snap,
            &road,
            &now,
            &next,
            &RelocationParams::default(),
        );
        assert_eq!(got, Some(CellId(4)));
    }

    #[test]
    fn dead_window_means_stay() {
        let road = build_grid(GridSpec::new(3, 3)).unwrap();
        let pred = RequestGraph::zero();
        let snap = snapshot_of(&[1.0, 2.0]);
        let got = relocate(
            d(0),
            CellId(4),
            &snap,
            &road,
            &pred,
            &pred,
            &RelocationParams::default(),
        );
        assert_eq!(got, None);
    }

    #[test]
    fn busiest_cell_skipped_when_its_destinations_go_dark() {
        // cell X=0 has 10 predicted requests, all toward cell 8 which has no
        // future outgoing demand; cell Y=1 has 4 requests toward cell 2 which
        // stays active. Y must win even though X has more requests now.
        let road = build_grid(GridSpec::new(3, 3)).unwrap();
        let mut now = RequestGraph::zero();
        now.add(CellId(0), CellId(8), 10.0);
        now.add(CellId(1), CellId(2), 4.0);
        let mut next = RequestGraph::zero();
        next.add(CellId(2), CellId(5), 2.0);
        let snap = snapshot_of(&[1.0, 9.0]);
        let got = relocate(
            d(0),
            CellId(4),
            &snap,
            &road,
            &now,
            &next,
            &RelocationParams::default(),
        );
        assert_eq!(got, Some(CellId(1)));
    }

    #[test]
    fn relocation_stays_within_the_window() {
        let road = build_grid(GridSpec::new(5, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let snap = snapshot_of(&[0.0, 1.0, 2.0]);
        for _ in 0..100 {
            let mut now = RequestGraph::zero();
            let mut next = RequestGraph::zero();
            for _ in 0..10 {
                let a = CellId(rng.random_range(0..25));
                let b = CellId(rng.random_range(0..25));
                if a != b {
                    now.add(a, b, rng.random_range(0.0..5.0));
                    next.add(b, a, rng.random_range(0.0..5.0));
                }
            }
            let at = CellId(rng.random_range(0..25));
            if let Some(target) =
                relocate(d(0), at, &snap, &road, &now, &next, &RelocationParams::default())
            {
                assert!(target == at || road.edge_dist(at, target).is_some());
            }
        }
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(improvement(120.0, 100.0).unwrap(), 20.0);
        assert_eq!(improvement(80.0, 100.0).unwrap(), -20.0);
        assert_eq!(improvement(1.0, 0.0).unwrap_err(), FairnessError::ZeroBaseline);
    }
}
