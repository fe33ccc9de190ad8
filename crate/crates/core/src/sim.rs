//! The discrete-time world: spawns orders per slice, relocates and routes
//! drivers, resolves at-cell order offers, and accumulates metrics.
//!
//! One step covers a 15-minute slice: expire stale orders, spawn this slice's
//! arrivals, snapshot incomes, take relocation decisions for eligible idle
//! drivers, recommend routes in priority order, run the movement ticks with
//! at-cell acceptance, and record metrics. The whole pipeline is a pure
//! function of (config, seed): two identical runs produce byte-identical
//! event logs and metrics files.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{DemandSpec, Placement, Policy, PredictorKind, WorldConfig};
use crate::demand::{
    self, oracle_replay, predict, synth_demand, DemandError, RequestGraph, TripRecord,
    SLICE_MINUTES,
};
use crate::econ::{driver_utility, utility_per_hour, DriverLedger, FareParams, Money, RideRecord};
use crate::fairness::{
    fair_objective, gini, lorenz, priority_order, relocate, IncomeSnapshot,
};
use crate::grid::{CellId, GridError, RoadGraph};
use crate::matching::{
    advance, try_accept, AcceptOutcome, MatchError, MatchEvent, OrderState, RejectReason,
    RideOrder, StopPlan,
};
use crate::route::{
    build_dag, dp_solve, edge_feasible, select_destination, DagEdge, Route, RouteError,
};
use crate::{DriverId, OrderId};

#[derive(Error, Debug)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl From<crate::config::ConfigError> for SimError {
    fn from(e: crate::config::ConfigError) -> SimError {
        SimError::Config(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriverStatus {
    Idle,
    /// The relocation hop to `target` has been applied this slice and the
    /// driver is waiting for its route recommendation.
    Relocating { target: CellId },
    Serving,
}

/// One open service episode; closed into a [`RideRecord`] when the driver
/// goes idle.
#[derive(Clone, Debug)]
pub struct RideEpisode {
    pub fares: Vec<Money>,
    pub dist_units: u32,
}

impl RideEpisode {
    pub fn service() -> RideEpisode {
        RideEpisode {
            fares: Vec::new(),
            dist_units: 0,
        }
    }
}

/// A fleet member: its position, current recommendation, planned path and
/// stops, onboard orders and economic ledger. Drivers are indexed by
/// contiguous ids starting at 0.
#[derive(Clone, Debug)]
pub struct Driver {
    pub id: DriverId,
    pub cell: CellId,
    pub route: Option<Route>,
    /// Upcoming cells, each adjacent to its predecessor.
    pub path: VecDeque<CellId>,
    pub plan: StopPlan,
    pub onboard: Vec<OrderId>,
    pub ledger: DriverLedger,
    pub status: DriverStatus,
    pub on_duty_since: u64,
    pub episode: Option<RideEpisode>,
}

impl Driver {
    pub fn new(id: DriverId, cell: CellId) -> Driver {
        Driver {
            id,
            cell,
            route: None,
            path: VecDeque::new(),
            plan: StopPlan::default(),
            onboard: Vec::new(),
            ledger: DriverLedger::default(),
            status: DriverStatus::Idle,
            on_duty_since: 0,
            episode: None,
        }
    }
}

/// Movement-tick context handed to the matching layer.
#[derive(Clone, Copy, Debug)]
pub struct MoveContext {
    pub minutes_per_cell: u32,
    pub cell_size_miles: f64,
    pub fare: FareParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Pickup,
    Dropoff,
    Reject(RejectReason),
}

/// One event-log line: `tick,driver,event,order,cell,reason`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub tick: u64,
    pub driver: DriverId,
    pub kind: EventKind,
    pub order: OrderId,
    pub cell: CellId,
}

impl EventRecord {
    pub fn csv_line(&self) -> String {
        let (name, reason) = match self.kind {
            EventKind::Pickup => ("pickup", ""),
            EventKind::Dropoff => ("dropoff", ""),
            EventKind::Reject(r) => ("reject", r.as_str()),
        };
        format!(
            "{},{},{},{},{},{}",
            self.tick, self.driver, name, self.order, self.cell, reason
        )
    }
}

/// Per-slice fleet metrics over utility-per-hour.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceMetrics {
    pub slice: u32,
    pub gini: f64,
    pub mean_uph: f64,
    pub min_uph: f64,
    pub max_uph: f64,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WaitingStats {
    pub served: u64,
    pub mean_minutes: f64,
    pub p50_minutes: f64,
    pub p90_minutes: f64,
    pub expired: u64,
    pub expired_mean_minutes: f64,
}

/// Waiting-time statistics: mean, median and 90th percentile (nearest-rank)
/// of served waits, with expired orders reported separately.
pub fn waiting_stats(served_minutes: &[u64], expired_minutes: &[u64]) -> WaitingStats {
    fn percentile(sorted: &[u64], p: f64) -> f64 {
        if sorted.is_empty() {
            return 0.0;
        }
        let rank = ((p / 100.0 * sorted.len() as f64).ceil() as usize).max(1) - 1;
        sorted[rank.min(sorted.len() - 1)] as f64
    }
    let mut sorted = served_minutes.to_vec();
    sorted.sort_unstable();
    let mean = |xs: &[u64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<u64>() as f64 / xs.len() as f64
        }
    };
    WaitingStats {
        served: served_minutes.len() as u64,
        mean_minutes: mean(served_minutes),
        p50_minutes: percentile(&sorted, 50.0),
        p90_minutes: percentile(&sorted, 90.0),
        expired: expired_minutes.len() as u64,
        expired_mean_minutes: mean(expired_minutes),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub spawned: u64,
    pub completed: u64,
    pub expired: u64,
    pub unfinished: u64,
    pub capacity_violations: u64,
    pub detour_violations: u64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DriverSummary {
    pub driver: DriverId,
    pub rides: usize,
    pub utility: Money,
    pub active_hours: f64,
    pub utility_per_hour: f64,
}

/// Everything a run produces; the CSV/JSON outputs are projections of this.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub slices: Vec<SliceMetrics>,
    pub final_gini: f64,
    pub total_utility: Money,
    pub lorenz: Vec<(f64, f64)>,
    pub waiting: WaitingStats,
    pub ledgers: Vec<DriverSummary>,
    pub counters: Counters,
    pub events: Vec<EventRecord>,
}

/// Flat run summary for cross-run comparisons.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub total_utility: f64,
    pub final_gini: f64,
    pub mean_wait_minutes: f64,
    pub p50_wait_minutes: f64,
    pub p90_wait_minutes: f64,
    pub served: u64,
    pub counters: Counters,
}

impl MetricsReport {
    pub fn summary(&self) -> Summary {
        Summary {
            total_utility: self.total_utility.to_f64(),
            final_gini: self.final_gini,
            mean_wait_minutes: self.waiting.mean_minutes,
            p50_wait_minutes: self.waiting.p50_minutes,
            p90_wait_minutes: self.waiting.p90_minutes,
            served: self.waiting.served,
            counters: self.counters,
        }
    }
}

enum DemandState {
    Synthetic(crate::demand::SynthProfile),
    Scripted {
        pred: RequestGraph,
        by_slice: BTreeMap<u32, Vec<RideOrder>>,
    },
    Csv {
        records: Vec<TripRecord>,
        by_slice: BTreeMap<u32, Vec<RideOrder>>,
        start: chrono::NaiveDateTime,
        predictor: PredictorKind,
    },
}

/// The simulation world. Construct with [`World::new`], advance slice by
/// slice with [`World::step`], and consume with [`World::finish`]; or use
/// [`run`] for the whole pipeline.
pub struct World {
    cfg: WorldConfig,
    road: Arc<RoadGraph>,
    drivers: Vec<Driver>,
    orders: BTreeMap<OrderId, RideOrder>,
    waiting: BTreeMap<CellId, Vec<OrderId>>,
    slice: u32,
    events: Vec<EventRecord>,
    slice_metrics: Vec<SliceMetrics>,
    served_waits: Vec<u64>,
    expired_waits: Vec<u64>,
    counters: Counters,
    demand: DemandState,
    /// Movement ticks owed by each driver for its relocation hop this slice.
    tick_debt: Vec<u32>,
}

/// Runs a full simulation for the given config.
pub fn run(cfg: WorldConfig) -> Result<MetricsReport, SimError> {
    let mut world = World::new(cfg)?;
    for _ in 0..world.cfg.duration_slices {
        world.step()?;
    }
    Ok(world.finish())
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<World, SimError> {
        cfg.validate()?;
        let road = Arc::new(cfg.build_road()?);
        let m = road.cell_count();

        let cells: Vec<CellId> = match &cfg.placement {
            Placement::Spread => (0..cfg.fleet_size)
                .map(|i| CellId((i as u64 * m as u64 / cfg.fleet_size as u64) as u32))
                .collect(),
            Placement::Cells(list) => list.iter().map(|&c| CellId(c)).collect(),
        };
        let drivers: Vec<Driver> = cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| Driver::new(DriverId(i as u32), c))
            .collect();

        let demand = match &cfg.demand {
            DemandSpec::Synthetic(profile) => DemandState::Synthetic(profile.clone()),
            DemandSpec::Scripted { request_list, orders } => {
                let pred = RequestGraph::parse_request_list(request_list)
                    .map_err(SimError::Config)?;
                let mut by_slice: BTreeMap<u32, Vec<RideOrder>> = BTreeMap::new();
                let mut seq: BTreeMap<u32, u64> = BTreeMap::new();
                for o in orders {
                    let n = seq.entry(o.slice).or_insert(0);
                    let id = OrderId(((o.slice as u64) << 32) | *n);
                    *n += 1;
                    by_slice.entry(o.slice).or_default().push(RideOrder::new(
                        id,
                        CellId(o.from),
                        CellId(o.to),
                        (o.slice * SLICE_MINUTES) as u64,
                        o.t_d,
                    ));
                }
                DemandState::Scripted { pred, by_slice }
            }
            DemandSpec::Csv {
                path,
                bounds,
                start,
                predictor,
            } => {
                let spec = match &cfg.grid {
                    crate::config::GridSource::Grid(s) => *s,
                    _ => unreachable!("validated"),
                };
                let file = std::fs::File::open(path).map_err(|source| SimError::Io {
                    path: path.clone(),
                    source,
                })?;
                let (records, _stats) = demand::ingest_trips(file, &spec, bounds)?;
                let start = crate::config::parse_start(start)
                    .ok_or_else(|| SimError::Config("bad start timestamp".into()))?;
                let by_slice = bucket_csv_orders(&records, start, cfg.duration_slices, cfg.seed);
                DemandState::Csv {
                    records,
                    by_slice,
                    start,
                    predictor: *predictor,
                }
            }
        };

        let fleet = drivers.len();
        Ok(World {
            cfg,
            road,
            drivers,
            orders: BTreeMap::new(),
            waiting: BTreeMap::new(),
            slice: 0,
            events: Vec::new(),
            slice_metrics: Vec::new(),
            served_waits: Vec::new(),
            expired_waits: Vec::new(),
            counters: Counters::default(),
            demand,
            tick_debt: vec![0; fleet],
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn road(&self) -> &RoadGraph {
        &self.road
    }

    pub fn drivers(&self) -> &[Driver] {
        &self.drivers
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn orders(&self) -> &BTreeMap<OrderId, RideOrder> {
        &self.orders
    }

    fn move_ctx(&self) -> MoveContext {
        MoveContext {
            minutes_per_cell: self.cfg.minutes_per_cell,
            cell_size_miles: self.cfg.cell_size_miles,
            fare: self.cfg.fare,
        }
    }

    fn spawn_orders(&mut self, slice: u32) -> Vec<RideOrder> {
        match &mut self.demand {
            DemandState::Synthetic(profile) => synth_demand(profile, self.cfg.seed, slice).1,
            DemandState::Scripted { by_slice, .. } | DemandState::Csv { by_slice, .. } => {
                by_slice.remove(&slice).unwrap_or_default()
            }
        }
    }

    /// Predicted request graph for a slice.
    fn predicted(&self, slice: u32) -> RequestGraph {
        match &self.demand {
            DemandState::Synthetic(profile) => profile.rates(slice),
            DemandState::Scripted { pred, .. } => pred.clone(),
            DemandState::Csv {
                records,
                start,
                predictor,
                ..
            } => {
                let at = *start + chrono::Duration::minutes((slice * SLICE_MINUTES) as i64);
                match predictor {
                    PredictorKind::Historical => predict(records, at, 1),
                    PredictorKind::Oracle => oracle_replay(records, at, 1),
                }
            }
        }
    }

    fn income_snapshot(&self, now: u64) -> IncomeSnapshot {
        IncomeSnapshot {
            taken_at_minutes: now,
            rates: self
                .drivers
                .iter()
                .map(|d| (d.id, utility_per_hour(&d.ledger)))
                .collect(),
        }
    }

    fn finish_episode(&mut self, i: usize) {
        let cell_size = self.cfg.cell_size_miles;
        let cost = self.cfg.fare.cost_per_mile;
        let d = &mut self.drivers[i];
        if let Some(ep) = d.episode.take() {
            let miles = ep.dist_units as f64 * cell_size;
            d.ledger.push_ride(RideRecord::close(ep.fares, miles), cost);
        }
        d.route = None;
    }

    fn resolve_offers(&mut self, i: usize, tick: u64, minutes: u64) -> Result<(), SimError> {
        let cell = self.drivers[i].cell;
        let Some(ids) = self.waiting.get(&cell) else {
            return Ok(());
        };
        let ids = ids.clone();
        let road = Arc::clone(&self.road);
        for oid in ids {
            if self.orders[&oid].state != OrderState::Waiting {
                continue;
            }
            let outcome = try_accept(
                &mut self.drivers[i],
                oid,
                &mut self.orders,
                &road,
                self.cfg.capacity,
                minutes,
            )?;
            let driver = self.drivers[i].id;
            match outcome {
                AcceptOutcome::Accepted => {
                    if let Some(v) = self.waiting.get_mut(&cell) {
                        v.retain(|&x| x != oid);
                    }
                    self.served_waits
                        .push(minutes - self.orders[&oid].requested_at);
                    self.events.push(EventRecord {
                        tick,
                        driver,
                        kind: EventKind::Pickup,
                        order: oid,
                        cell,
                    });
                }
                AcceptOutcome::Rejected(reason) => {
                    self.events.push(EventRecord {
                        tick,
                        driver,
                        kind: EventKind::Reject(reason),
                        order: oid,
                        cell,
                    });
                }
            }
        }
        Ok(())
    }

    /// Advances the world by one slice.
    pub fn step(&mut self) -> Result<(), SimError> {
        let slice = self.slice;
        let now = (slice as u64) * SLICE_MINUTES as u64;
        let mps = self.cfg.moves_per_slice();
        let road = Arc::clone(&self.road);
        self.tick_debt.iter_mut().for_each(|d| *d = 0);

        // (1) expire stale waiting orders, then spawn this slice's arrivals
        let horizon = (self.cfg.expiry_slices as u64) * SLICE_MINUTES as u64;
        let stale: Vec<OrderId> = self
            .orders
            .iter()
            .filter(|(_, o)| o.state == OrderState::Waiting && now >= o.requested_at + horizon)
            .map(|(&id, _)| id)
            .collect();
        for oid in stale {
            let origin = {
                let o = self.orders.get_mut(&oid).unwrap();
                o.state = OrderState::Expired;
                o.origin
            };
            self.counters.expired += 1;
            self.expired_waits.push(horizon);
            if let Some(v) = self.waiting.get_mut(&origin) {
                v.retain(|&x| x != oid);
            }
        }
        for order in self.spawn_orders(slice) {
            self.counters.spawned += 1;
            self.waiting.entry(order.origin).or_default().push(order.id);
            self.orders.insert(order.id, order);
        }

        // (2) income snapshot, (3) predictions
        let snapshot = self.income_snapshot(now);
        let pred_now = self.predicted(slice);
        let pred_next = self.predicted(slice + 1);

        // (4) relocation decisions for eligible idle drivers: the hop to the
        // window target is applied right away (it costs unpaid miles and the
        // equivalent movement ticks), so the driver is recommended a route
        // from its new cell in the same slice
        if self.cfg.policy == Policy::FairnessOn && self.cfg.relocation.fraction > 0.0 {
            for i in 0..self.drivers.len() {
                if self.drivers[i].status != DriverStatus::Idle {
                    continue;
                }
                let (id, cell) = (self.drivers[i].id, self.drivers[i].cell);
                let target = relocate(
                    id,
                    cell,
                    &snapshot,
                    &road,
                    &pred_now,
                    &pred_next,
                    &self.cfg.relocation,
                );
                if let Some(target) = target {
                    if target != cell {
                        let path = road.sp_path(cell, target)?;
                        let dist = road.path_dist(&path)?;
                        let miles = dist as f64 * self.cfg.cell_size_miles;
                        let d = &mut self.drivers[i];
                        d.cell = target;
                        d.status = DriverStatus::Relocating { target };
                        d.ledger
                            .push_ride(RideRecord::close(vec![], miles), self.cfg.fare.cost_per_mile);
                        self.tick_debt[i] = (path.len() - 1) as u32;
                    }
                }
            }
        }

        // (5) recommendations in priority order, with at-cell offers
        let service_order: Vec<DriverId> = match self.cfg.policy {
            Policy::FairnessOn => priority_order(&snapshot),
            Policy::FcfsDp | Policy::Greedy => self.drivers.iter().map(|d| d.id).collect(),
        };
        for &did in &service_order {
            let i = did.0 as usize;
            if !matches!(
                self.drivers[i].status,
                DriverStatus::Idle | DriverStatus::Relocating { .. }
            ) {
                continue;
            }
            let cell = self.drivers[i].cell;
            let dest = match select_destination(&pred_now, cell) {
                Ok(d) => d,
                Err(RouteError::NoDestination(_)) => {
                    self.drivers[i].status = DriverStatus::Idle;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let route = match self.cfg.policy {
                Policy::Greedy => {
                    greedy_route(&pred_now, &road, cell, dest, self.cfg.route_detour)?
                }
                _ => {
                    let dag = build_dag(&road, &pred_now, cell, dest)?;
                    dp_solve(&dag, &road, self.cfg.route_detour)?
                }
            };
            let d = &mut self.drivers[i];
            d.path = route.cells[1..].iter().copied().collect();
            d.route = Some(route);
            d.status = DriverStatus::Serving;
            d.episode = Some(RideEpisode::service());
            self.resolve_offers(i, (slice * mps) as u64, now)?;
        }

        // (6) movement ticks with at-cell acceptance; relocation hops are
        // repaid in movement ticks before the new route starts
        let ctx = self.move_ctx();
        for mv in 0..mps {
            let tick = (slice * mps + mv) as u64;
            let minutes = now + ((mv + 1) * self.cfg.minutes_per_cell) as u64;
            for &did in &service_order {
                let i = did.0 as usize;
                if self.tick_debt[i] > 0 {
                    self.tick_debt[i] -= 1;
                    continue;
                }
                if self.drivers[i].status == DriverStatus::Idle || self.drivers[i].path.is_empty()
                {
                    continue;
                }
                let events = advance(
                    &mut self.drivers[i],
                    &mut self.orders,
                    &road,
                    &ctx,
                    minutes,
                )?;
                for ev in events {
                    let MatchEvent::Dropoff {
                        order,
                        cell,
                        detour_ok,
                    } = ev;
                    if !detour_ok {
                        self.counters.detour_violations += 1;
                    }
                    self.counters.completed += 1;
                    self.events.push(EventRecord {
                        tick,
                        driver: did,
                        kind: EventKind::Dropoff,
                        order,
                        cell,
                    });
                }
                if self.drivers[i].onboard.len() > self.cfg.capacity {
                    self.counters.capacity_violations += 1;
                }
                if self.drivers[i].status == DriverStatus::Serving {
                    self.resolve_offers(i, tick, minutes)?;
                    if self.drivers[i].path.is_empty() && self.drivers[i].plan.is_empty() {
                        self.finish_episode(i);
                        self.drivers[i].status = DriverStatus::Idle;
                    }
                }
            }
        }

        // (7) ledgers and per-slice metrics
        for d in &mut self.drivers {
            d.ledger.active_minutes += SLICE_MINUTES as u64;
        }
        let rates: Vec<f64> = self
            .drivers
            .iter()
            .map(|d| utility_per_hour(&d.ledger))
            .collect();
        let weights = vec![1.0; rates.len()];
        self.slice_metrics.push(SliceMetrics {
            slice,
            gini: gini(&rates),
            mean_uph: rates.iter().sum::<f64>() / rates.len() as f64,
            min_uph: rates.iter().copied().fold(f64::INFINITY, f64::min),
            max_uph: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            objective: fair_objective(&rates, &weights),
        });
        self.slice += 1;
        Ok(())
    }

    /// Closes the run: expires leftover waiting orders, flushes open
    /// episodes, and builds the report.
    pub fn finish(mut self) -> MetricsReport {
        let end = (self.slice as u64) * SLICE_MINUTES as u64;
        let horizon = (self.cfg.expiry_slices as u64) * SLICE_MINUTES as u64;
        let mut unfinished = 0;
        for o in self.orders.values_mut() {
            match o.state {
                OrderState::Waiting => {
                    o.state = OrderState::Expired;
                    self.counters.expired += 1;
                    self.expired_waits.push((end - o.requested_at).min(horizon));
                }
                OrderState::Onboard(_) => unfinished += 1,
                _ => {}
            }
        }
        self.counters.unfinished = unfinished;

        for i in 0..self.drivers.len() {
            self.finish_episode(i);
        }
        for d in &self.drivers {
            debug_assert_eq!(
                driver_utility(&d.ledger, self.cfg.fare.cost_per_mile),
                d.ledger.cumulative_utility,
                "ledger must replay from its ride records"
            );
        }

        let rates: Vec<f64> = self
            .drivers
            .iter()
            .map(|d| utility_per_hour(&d.ledger))
            .collect();
        let ledgers = self
            .drivers
            .iter()
            .map(|d| DriverSummary {
                driver: d.id,
                rides: d.ledger.ride_count(),
                utility: d.ledger.cumulative_utility,
                active_hours: d.ledger.active_hours(),
                utility_per_hour: utility_per_hour(&d.ledger),
            })
            .collect();
        MetricsReport {
            final_gini: gini(&rates),
            lorenz: lorenz(&rates),
            total_utility: self.drivers.iter().map(|d| d.ledger.cumulative_utility).sum(),
            waiting: waiting_stats(&self.served_waits, &self.expired_waits),
            slices: self.slice_metrics,
            ledgers,
            counters: self.counters,
            events: self.events,
        }
    }
}

fn bucket_csv_orders(
    records: &[TripRecord],
    start: chrono::NaiveDateTime,
    duration_slices: u32,
    seed: u64,
) -> BTreeMap<u32, Vec<RideOrder>> {
    use rand::{Rng, SeedableRng};
    let mut by_slice: BTreeMap<u32, Vec<(CellId, CellId)>> = BTreeMap::new();
    for r in records {
        let minutes = (r.pickup_time - start).num_minutes();
        if minutes < 0 {
            continue;
        }
        let slice = minutes as u32 / SLICE_MINUTES;
        if slice < duration_slices {
            by_slice
                .entry(slice)
                .or_default()
                .push((r.pickup_cell, r.dropoff_cell));
        }
    }
    by_slice
        .into_iter()
        .map(|(slice, pairs)| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(slice as u64);
            let orders = pairs
                .into_iter()
                .enumerate()
                .map(|(i, (from, to))| {
                    RideOrder::new(
                        OrderId(((slice as u64) << 32) | i as u64),
                        from,
                        to,
                        (slice * SLICE_MINUTES) as u64,
                        rng.random_range(1.0..=2.0),
                    )
                })
                .collect();
            (slice, orders)
        })
        .collect()
}

/// Efficiency baseline: from each cell move to the feasible forward neighbor
/// with the most immediate expected requests (ties by lowest cell id),
/// continuing along the shortest path when no feasible forward edge remains.
pub fn greedy_route(
    req: &RequestGraph,
    road: &RoadGraph,
    source: CellId,
    dest: CellId,
    t_d: f64,
) -> Result<Route, RouteError> {
    let dag = build_dag(road, req, source, dest)?;
    let to_dest = road.sp_table(dest)?;
    let sp_trip = dag.sp_source_dest;
    if sp_trip == 0 {
        return Err(RouteError::ZeroShortestPath);
    }
    let mut cells = vec![source];
    let mut at = source;
    let mut travelled = 0u32;
    let mut value = 0.0;
    while at != dest {
        let mut pick: Option<&DagEdge> = None;
        for e in dag.out_edges(at) {
            if edge_feasible(e.dist, travelled, to_dest[e.to.idx()], sp_trip, t_d)? {
                match pick {
                    Some(p) if e.requests <= p.requests => {}
                    _ => pick = Some(e),
                }
            }
        }
        match pick {
            Some(e) => {
                travelled += e.dist;
                value += e.requests;
                cells.push(e.to);
                at = e.to;
            }
            None => {
                let tail = road.sp_path(at, dest)?;
                for w in tail.windows(2) {
                    travelled += road.edge_dist(w[0], w[1]).expect("sp path is adjacent");
                    value += dag.edge_requests(w[0], w[1]).unwrap_or(0.0);
                    cells.push(w[1]);
                }
                at = dest;
            }
        }
    }
    Ok(Route {
        cells,
        total_dist: travelled,
        expected_requests: value,
    })
}

// ---------------------------------------------------------------------------
// Run outputs

const MANIFEST_FILE: &str = "manifest.json";
const SUMMARY_FILE: &str = "summary.json";

/// Renders the event log in its CSV format.
pub fn events_csv(events: &[EventRecord]) -> String {
    let mut out = String::from("tick,driver,event,order,cell,reason\n");
    for e in events {
        out.push_str(&e.csv_line());
        out.push('\n');
    }
    out
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    version: String,
    seed: u64,
    policy: Policy,
    config_sha256: String,
    demand_fingerprint: String,
    config: WorldConfig,
}

/// Writes the event log, metrics CSVs, ledgers, summary and manifest of a
/// run into a directory.
pub fn write_run_dir(dir: &Path, cfg: &WorldConfig, report: &MetricsReport) -> Result<(), SimError> {
    let io_err = |path: &Path, source: io::Error| SimError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, contents: String| -> Result<(), SimError> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))
    };

    write("events.csv", events_csv(&report.events))?;

    let mut metrics = String::from("tick,gini,mean_uph,min_uph,max_uph,objective\n");
    for s in &report.slices {
        writeln!(
            metrics,
            "{},{},{},{},{},{}",
            s.slice, s.gini, s.mean_uph, s.min_uph, s.max_uph, s.objective
        )
        .unwrap();
    }
    write("metrics.csv", metrics)?;

    let mut lorenz = String::from("pop_share,income_share\n");
    for (x, y) in &report.lorenz {
        writeln!(lorenz, "{x},{y}").unwrap();
    }
    write("lorenz.csv", lorenz)?;

    let mut ledgers = String::from("driver,rides,utility,active_hours,utility_per_hour\n");
    for l in &report.ledgers {
        writeln!(
            ledgers,
            "{},{},{},{},{}",
            l.driver, l.rides, l.utility, l.active_hours, l.utility_per_hour
        )
        .unwrap();
    }
    write("ledgers.csv", ledgers)?;

    write(
        SUMMARY_FILE,
        serde_json::to_string_pretty(&report.summary()).expect("summary serializes"),
    )?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        policy: cfg.policy,
        config_sha256: cfg.sha256(),
        demand_fingerprint: cfg.demand_fingerprint(),
        config: cfg.clone(),
    };
    write(
        MANIFEST_FILE,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Reads back the summary of a completed run directory.
pub fn read_summary(dir: &Path) -> Result<Summary, SimError> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::Config(format!("bad summary: {e}")))
}

/// Reads back the demand fingerprint recorded in a run manifest.
pub fn read_fingerprint(dir: &Path) -> Result<String, SimError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SimError::Config(format!("bad manifest: {e}")))?;
    Ok(manifest.demand_fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridSource;
    use crate::demand::SynthProfile;
    use crate::fixtures;
    use crate::grid::GridSpec;

    fn synth_world(base_rate: f64, fleet: u32, slices: u32) -> WorldConfig {
        let spec = GridSpec::new(4, 4);
        let mut cfg = WorldConfig::new(
            GridSource::Grid(spec),
            fleet,
            DemandSpec::Synthetic(SynthProfile {
                grid: spec,
                base_rate,
                base_attraction: 1.0,
                hotspots: vec![],
                tod_curve: vec![],
                extra_pairs: vec![],
                trip_radius: None,
            }),
        );
        cfg.duration_slices = slices;
        cfg
    }

    #[test]
    fn zero_duration_run_is_empty() {
        let report = run(synth_world(0.1, 2, 0)).unwrap();
        assert_eq!(report.total_utility, Money::ZERO);
        assert!(report.slices.is_empty());
        assert!(report.events.is_empty());
    }

    #[test]
    fn empty_demand_keeps_drivers_idle() {
        let report = run(synth_world(0.0, 3, 4)).unwrap();
        assert_eq!(report.counters.spawned, 0);
        assert_eq!(report.total_utility, Money::ZERO);
        assert!(report.events.is_empty());
        assert_eq!(report.final_gini, 0.0);
    }

    #[test]
    fn one_order_at_the_driver_cell_is_served_with_zero_wait() {
        let spec = GridSpec::new(3, 3);
        let mut cfg = WorldConfig::new(
            GridSource::Grid(spec),
            1,
            DemandSpec::Scripted {
                request_list: "cells 9\n0 2 1.0\n".into(),
                orders: vec![crate::config::ScriptedOrder {
                    slice: 0,
                    from: 0,
                    to: 2,
                    t_d: 1.5,
                }],
            },
        );
        cfg.placement = Placement::Cells(vec![0]);
        cfg.duration_slices = 2;
        let report = run(cfg).unwrap();
        assert_eq!(report.counters.spawned, 1);
        assert_eq!(report.counters.completed, 1);
        assert_eq!(report.waiting.served, 1);
        assert_eq!(report.waiting.mean_minutes, 0.0);
        assert!(report.total_utility > Money::ZERO);
    }

    #[test]
    fn conservation_every_order_reaches_a_terminal_state() {
        let mut cfg = synth_world(0.05, 3, 8);
        cfg.seed = 5;
        cfg.policy = Policy::FairnessOn;
        let report = run(cfg).unwrap();
        assert_eq!(
            report.counters.spawned,
            report.counters.completed + report.counters.expired + report.counters.unfinished
        );
    }

    #[test]
    fn hard_invariants_hold_on_a_busy_world() {
        for policy in [Policy::FairnessOn, Policy::FcfsDp, Policy::Greedy] {
            let mut cfg = synth_world(0.12, 4, 10);
            cfg.seed = 11;
            cfg.policy = policy;
            let report = run(cfg).unwrap();
            assert_eq!(report.counters.capacity_violations, 0);
            assert_eq!(report.counters.detour_violations, 0);
            assert!(report.counters.completed > 0);
        }
    }

    #[test]
    fn identical_runs_are_identical() {
        let mut cfg = synth_world(0.08, 3, 6);
        cfg.seed = 123;
        cfg.policy = Policy::FairnessOn;
        let a = run(cfg.clone()).unwrap();
        let b = run(cfg).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.slices, b.slices);
        assert_eq!(a.total_utility, b.total_utility);
    }

    #[test]
    fn scripted_walkthrough_event_sequence() {
        let report = run(fixtures::walkthrough_config()).unwrap();
        let lines: Vec<String> = report.events.iter().map(|e| e.csv_line()).collect();
        assert_eq!(lines, fixtures::walkthrough_expected_events());
        assert_eq!(report.counters.completed, 5);
        assert_eq!(report.counters.capacity_violations, 0);
        assert_eq!(report.counters.detour_violations, 0);
    }

    #[test]
    fn greedy_never_beats_the_solver() {
        use rand::{Rng, SeedableRng};
        let road = crate::grid::build_grid(GridSpec::new(5, 5)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let mut req = RequestGraph::zero();
            for _ in 0..60 {
                let a = CellId(rng.random_range(0..25));
                let b = CellId(rng.random_range(0..25));
                if a != b {
                    req.add(a, b, rng.random_range(0.0..2.0));
                }
            }
            let source = CellId(rng.random_range(0..25));
            let dest = CellId(rng.random_range(0..25));
            if source == dest {
                continue;
            }
            let greedy = greedy_route(&req, &road, source, dest, 1.5).unwrap();
            let dag = build_dag(&road, &req, source, dest).unwrap();
            let dp = dp_solve(&dag, &road, 1.5).unwrap();
            assert!(greedy.expected_requests <= dp.expected_requests + 1e-9);
            assert_eq!(*greedy.cells.last().unwrap(), dest);
        }
    }

    #[test]
    fn greedy_equals_solver_on_a_chain() {
        // a 1xN grid has a single forward path
        let road = crate::grid::build_grid(GridSpec::new(1, 5)).unwrap();
        let mut req = RequestGraph::zero();
        for i in 0..4 {
            req.add(CellId(i), CellId(i + 1), (i + 1) as f64);
        }
        let greedy = greedy_route(&req, &road, CellId(0), CellId(4), 1.5).unwrap();
        let dag = build_dag(&road, &req, CellId(0), CellId(4)).unwrap();
        let dp = dp_solve(&dag, &road, 1.5).unwrap();
        assert_eq!(greedy.cells, dp.cells);
        assert_eq!(greedy.expected_requests, dp.expected_requests);
    }

    #[test]
    fn waiting_stats_percentiles() {
        let stats = waiting_stats(&[0, 15, 15, 30, 60], &[60, 60]);
        assert_eq!(stats.served, 5);
        assert_eq!(stats.mean_minutes, 24.0);
        assert_eq!(stats.p50_minutes, 15.0);
        assert_eq!(stats.p90_minutes, 60.0);
        assert_eq!(stats.expired, 2);
        assert_eq!(stats.expired_mean_minutes, 60.0);
        assert_eq!(waiting_stats(&[], &[]).mean_minutes, 0.0);
    }

    #[test]
    fn order_served_next_slice_waits_fifteen_minutes() {
        // the driver starts five moves away and reaches the order's origin
        // exactly one slice after it was requested
        let spec = GridSpec::new(1, 8);
        let mut cfg = WorldConfig::new(
            GridSource::Grid(spec),
            1,
            DemandSpec::Scripted {
                // demand field draws the driver from cell 5 toward cell 0
                request_list: "cells 8\n5 0 1.0\n".into(),
                orders: vec![crate::config::ScriptedOrder {
                    slice: 0,
                    from: 0,
                    to: 4,
                    t_d: 2.0,
                }],
            },
        );
        cfg.placement = Placement::Cells(vec![5]);
        cfg.duration_slices = 3;
        let report = run(cfg).unwrap();
        assert_eq!(report.waiting.served, 1);
        assert_eq!(report.waiting.mean_minutes, 15.0);
        assert_eq!(report.counters.completed, 1);
    }

    #[test]
    fn priority_scheduling_shrinks_the_income_gap() {
        // two drivers at the same cell compete for one shuttle corridor
        let spec = GridSpec::new(4, 4);
        let make = |policy: Policy| {
            let mut cfg = WorldConfig::new(
                GridSource::Grid(spec),
                2,
                DemandSpec::Synthetic(SynthProfile {
                    grid: spec,
                    base_rate: 0.0,
                    base_attraction: 1.0,
                    hotspots: vec![],
                    tod_curve: vec![],
                    extra_pairs: vec![
                        (CellId(5), CellId(7), 1.0),
                        (CellId(7), CellId(5), 1.0),
                    ],
                    trip_radius: None,
                }),
            );
            cfg.placement = Placement::Cells(vec![5, 5]);
            cfg.duration_slices = 50;
            cfg.seed = 21;
            cfg.policy = policy;
            cfg.relocation.fraction = 0.0; // isolate the priority effect
            cfg
        };
        let fcfs = run(make(Policy::FcfsDp)).unwrap();
        let fair = run(make(Policy::FairnessOn)).unwrap();
        let gap = |r: &MetricsReport| {
            (r.ledgers[0].utility.to_f64() - r.ledgers[1].utility.to_f64()).abs()
        };
        assert!(
            gap(&fair) < gap(&fcfs),
            "priority gap {} vs fcfs gap {}",
            gap(&fair),
            gap(&fcfs)
        );
        assert!(fair.final_gini <= fcfs.final_gini);
    }

    #[test]
    fn run_dir_written_and_summary_readable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_world(0.05, 2, 3);
        let report = run(cfg.clone()).unwrap();
        write_run_dir(dir.path(), &cfg, &report).unwrap();
        for f in [
            "events.csv",
            "metrics.csv",
            "lorenz.csv",
            "ledgers.csv",
            "summary.json",
            "manifest.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        let summary = read_summary(dir.path()).unwrap();
        assert_eq!(summary.counters.spawned, report.counters.spawned);
        assert_eq!(read_fingerprint(dir.path()).unwrap(), cfg.demand_fingerprint());
    }
}
