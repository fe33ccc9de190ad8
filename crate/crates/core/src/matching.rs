//! Ride-order acceptance and driver movement along the planned path.
//!
//! A driver serving a recommended route is offered the waiting orders of each
//! cell it enters. Accepting an order adds its dropoff to the stop plan:
//! every ordering of the planned stops is enumerated, each is materialized
//! into a concrete path (following the remaining recommended spine where the
//! next stop lies ahead on it, and shortest-path excursions otherwise), and
//! the cheapest ordering whose projected detour ratios all pass wins. Orders
//! that would bust the vehicle capacity or any rider's threshold are
//! rejected.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::econ::trip_fare;
use crate::grid::{CellId, GridError, RoadGraph};
use crate::route::DETOUR_EPS;
use crate::sim::{Driver, MoveContext};
use crate::{DriverId, OrderId};

#[derive(Error, Debug)]
pub enum MatchError {
    #[error("driver path is broken: {from} and {to} are not adjacent")]
    BrokenPath { from: CellId, to: CellId },
    #[error("order {0} not found")]
    UnknownOrder(OrderId),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Lifecycle of a ride order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderState {
    Waiting,
    Onboard(DriverId),
    Completed,
    Expired,
}

/// One passenger request with its sampled detour threshold and the travel it
/// has accrued while onboard.
#[derive(Clone, Debug, PartialEq)]
pub struct RideOrder {
    pub id: OrderId,
    pub origin: CellId,
    pub dest: CellId,
    /// Request time in minutes of simulated time.
    pub requested_at: u64,
    /// Detour threshold `t_d` in `[1, 2]`.
    pub detour_threshold: f64,
    pub state: OrderState,
    pub pickup_at: Option<u64>,
    pub dropoff_at: Option<u64>,
    /// Distance-units travelled while onboard.
    pub distance_onboard: u32,
    /// Movement ticks spent onboard (the time basis for fares).
    pub ticks_onboard: u32,
}

impl RideOrder {
    pub fn new(id: OrderId, origin: CellId, dest: CellId, requested_at: u64, t_d: f64) -> RideOrder {
        debug_assert!(origin != dest, "zero-length order");
        debug_assert!(t_d >= 1.0);
        RideOrder {
            id,
            origin,
            dest,
            requested_at,
            detour_threshold: t_d,
            state: OrderState::Waiting,
            pickup_at: None,
            dropoff_at: None,
            distance_onboard: 0,
            ticks_onboard: 0,
        }
    }
}

/// A planned dropoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stop {
    pub cell: CellId,
    pub order: OrderId,
}

/// Ordered dropoffs ahead of a driver, with the projected total onboard
/// distance each order will have reached by its stop.
#[derive(Clone, Debug, Default)]
pub struct StopPlan {
    pub stops: VecDeque<Stop>,
    pub projected: BTreeMap<OrderId, u32>,
}

impl StopPlan {
    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Capacity,
    Detour,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Capacity => "capacity",
            RejectReason::Detour => "detour",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptOutcome {
    Accepted,
    Rejected(RejectReason),
}

struct Candidate {
    path: Vec<CellId>,
    total_dist: u32,
    /// Distance from the current cell to each stop along this path.
    ahead: BTreeMap<OrderId, u32>,
}

/// Materializes one stop ordering into a concrete cell path starting at
/// `current`. While the next stop lies ahead on the remaining spine the spine
/// is followed; otherwise the leg is a shortest-path excursion, re-syncing to
/// the spine afterwards when the excursion lands back on it. After the last
/// stop the rest of the spine is completed if still in sync.
fn build_candidate(
    road: &RoadGraph,
    current: CellId,
    spine: &[CellId],
    ordering: &[Stop],
) -> Result<Candidate, MatchError> {
    let mut pos = current;
    let mut cursor = 0usize;
    let mut on_spine = true;
    let mut path = Vec::new();
    let mut dist = 0u32;
    let mut ahead = BTreeMap::new();

    let walk_to = |pos: &mut CellId, path: &mut Vec<CellId>, dist: &mut u32, c: CellId| -> Result<(), MatchError> {
        *dist += road
            .edge_dist(*pos, c)
            .ok_or(MatchError::BrokenPath { from: *pos, to: c })?;
        path.push(c);
        *pos = c;
        Ok(())
    };

    for stop in ordering {
        if stop.cell != pos {
            let hit = if on_spine {
                spine[cursor..].iter().position(|&c| c == stop.cell)
            } else {
                None
            };
            match hit {
                Some(offset) => {
                    for i in cursor..=cursor + offset {
                        walk_to(&mut pos, &mut path, &mut dist, spine[i])?;
                    }
                    cursor += offset + 1;
                }
                None => {
                    let leg = road.sp_path(pos, stop.cell)?;
                    for &c in &leg[1..] {
                        walk_to(&mut pos, &mut path, &mut dist, c)?;
                    }
                    if let Some(j) = spine[cursor..].iter().position(|&c| c == pos) {
                        cursor += j + 1;
                        on_spine = true;
                    } else {
                        on_spine = false;
                    }
                }
            }
        }
        ahead.insert(stop.order, dist);
    }
    if on_spine {
        for i in cursor..spine.len() {
            walk_to(&mut pos, &mut path, &mut dist, spine[i])?;
        }
    }
    Ok(Candidate {
        path,
        total_dist: dist,
        ahead,
    })
}

fn permutations(stops: &[Stop]) -> Vec<Vec<Stop>> {
    fn rec(rest: &mut Vec<Stop>, cur: &mut Vec<Stop>, out: &mut Vec<Vec<Stop>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let item = rest.remove(i);
            cur.push(item);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(i, item);
        }
    }
    let mut out = Vec::new();
    rec(&mut stops.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Decides whether a driver standing at the order's origin can take it.
///
/// A full vehicle rejects on capacity. Otherwise every ordering of the
/// planned stops extended with the new dropoff is tried; the minimum-distance
/// ordering whose projected detour ratios pass for the new order and every
/// onboard order is installed (pickup is immediate at the current cell), else
/// the order is rejected on detour.
pub fn try_accept(
    driver: &mut Driver,
    order_id: OrderId,
    orders: &mut BTreeMap<OrderId, RideOrder>,
    road: &RoadGraph,
    capacity: usize,
    now_minutes: u64,
) -> Result<AcceptOutcome, MatchError> {
    let order = orders.get(&order_id).ok_or(MatchError::UnknownOrder(order_id))?;
    debug_assert_eq!(order.state, OrderState::Waiting);
    debug_assert_eq!(order.origin, driver.cell, "orders are offered at their origin cell");

    if driver.onboard.len() >= capacity {
        return Ok(AcceptOutcome::Rejected(RejectReason::Capacity));
    }

    // accrued distance and absolute distance limit per affected order
    let mut limits: BTreeMap<OrderId, (u32, f64)> = BTreeMap::new();
    for stop in driver.plan.stops.iter() {
        let o = orders.get(&stop.order).ok_or(MatchError::UnknownOrder(stop.order))?;
        let sp = road.shortest_path_len(o.origin, o.dest)?;
        limits.insert(
            stop.order,
            (o.distance_onboard, o.detour_threshold * sp as f64 + DETOUR_EPS),
        );
    }
    let new_sp = road.shortest_path_len(order.origin, order.dest)?;
    limits.insert(order_id, (0, order.detour_threshold * new_sp as f64 + DETOUR_EPS));

    let spine: Vec<CellId> = driver.path.iter().copied().collect();
    let mut all_stops: Vec<Stop> = driver.plan.stops.iter().copied().collect();
    all_stops.push(Stop {
        cell: order.dest,
        order: order_id,
    });

    let mut best: Option<(Vec<Stop>, Candidate)> = None;
    for ordering in permutations(&all_stops) {
        let cand = build_candidate(road, driver.cell, &spine, &ordering)?;
        let feasible = ordering.iter().all(|s| {
            let (accrued, limit) = limits[&s.order];
            ((accrued + cand.ahead[&s.order]) as f64) <= limit
        });
        if feasible && best.as_ref().map_or(true, |(_, b)| cand.total_dist < b.total_dist) {
            best = Some((ordering, cand));
        }
    }

    let Some((ordering, cand)) = best else {
        return Ok(AcceptOutcome::Rejected(RejectReason::Detour));
    };

    driver.plan.projected = ordering
        .iter()
        .map(|s| (s.order, limits[&s.order].0 + cand.ahead[&s.order]))
        .collect();
    driver.plan.stops = ordering.into();
    driver.path = cand.path.into();
    driver.onboard.push(order_id);
    debug_assert!(plan_consistent(driver), "installed plan must lie on the path");

    let order = orders.get_mut(&order_id).unwrap();
    order.state = OrderState::Onboard(driver.id);
    order.pickup_at = Some(now_minutes);
    Ok(AcceptOutcome::Accepted)
}

/// Every planned stop must be served, in order, by walking the planned path.
fn plan_consistent(driver: &Driver) -> bool {
    let mut stops = driver.plan.stops.iter();
    let mut next = stops.next();
    for &cell in driver.path.iter() {
        while let Some(s) = next {
            if s.cell == cell {
                next = stops.next();
            } else {
                break;
            }
        }
    }
    next.is_none()
}

/// Events emitted by one movement tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatchEvent {
    Dropoff {
        order: OrderId,
        cell: CellId,
        /// Whether the realized detour ratio stayed within the threshold.
        detour_ok: bool,
    },
}

/// Moves the driver one cell along its path, accruing distance and time to
/// every onboard order, and completes the leading stops of the plan when
/// their cell is reached. A driver with an empty path stays idle and emits
/// nothing.
pub fn advance(
    driver: &mut Driver,
    orders: &mut BTreeMap<OrderId, RideOrder>,
    road: &RoadGraph,
    ctx: &MoveContext,
    now_minutes: u64,
) -> Result<Vec<MatchEvent>, MatchError> {
    let mut events = Vec::new();
    let Some(next) = driver.path.pop_front() else {
        return Ok(events);
    };
    let dist = road
        .edge_dist(driver.cell, next)
        .ok_or(MatchError::BrokenPath {
            from: driver.cell,
            to: next,
        })?;
    driver.cell = next;
    if let Some(ep) = driver.episode.as_mut() {
        ep.dist_units += dist;
    }
    for &oid in &driver.onboard {
        let o = orders.get_mut(&oid).ok_or(MatchError::UnknownOrder(oid))?;
        o.distance_onboard += dist;
        o.ticks_onboard += 1;
    }

    while driver.plan.stops.front().map_or(false, |s| s.cell == driver.cell) {
        let stop = driver.plan.stops.pop_front().unwrap();
        driver.plan.projected.remove(&stop.order);
        driver.onboard.retain(|&x| x != stop.order);
        let o = orders.get_mut(&stop.order).ok_or(MatchError::UnknownOrder(stop.order))?;
        o.state = OrderState::Completed;
        o.dropoff_at = Some(now_minutes);
        let sp = road.shortest_path_len(o.origin, o.dest)?;
        let detour_ok =
            (o.distance_onboard as f64) <= o.detour_threshold * sp as f64 + DETOUR_EPS;
        let miles = o.distance_onboard as f64 * ctx.cell_size_miles;
        let minutes = (o.ticks_onboard * ctx.minutes_per_cell) as f64;
        let fare = trip_fare(&ctx.fare, miles, minutes);
        if let Some(ep) = driver.episode.as_mut() {
            ep.fares.push(fare);
        }
        events.push(MatchEvent::Dropoff {
            order: stop.order,
            cell: driver.cell,
            detour_ok,
        });
    }
    Ok(events)
}
