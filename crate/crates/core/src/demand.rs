//! Ride demand: trip-record ingestion, request graphs, predictors and the
//! seeded synthetic generator.
//!
//! A [`RequestGraph`] holds the expected number of requests between every
//! ordered cell pair for one 15-minute slice. It can come from a historical
//! average over past trip records, from an oracle replay of the actual
//! arrivals (to isolate routing quality from prediction error), or from a
//! synthetic demand field.

use std::collections::BTreeMap;
use std::io;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::grid::{CellId, GridSpec};
use crate::matching::RideOrder;
use crate::OrderId;

/// Length of one time slice in minutes.
pub const SLICE_MINUTES: u32 = 15;
/// Number of slices in a day.
pub const SLICES_PER_DAY: u32 = 96;

/// Epoch used to stamp synthetic slices.
pub fn synthetic_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

#[derive(Error, Debug)]
pub enum DemandError {
    #[error("geo bounding box is empty (min must be strictly below max)")]
    EmptyBounds,
    #[error("no usable trip records after ingestion")]
    NoRecords,
    #[error("trip CSV is missing column {0:?}")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// One cleaned trip record mapped onto grid cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripRecord {
    pub pickup_time: NaiveDateTime,
    pub pickup_cell: CellId,
    pub dropoff_cell: CellId,
    pub passenger_count: u32,
}

/// Geographic bounding box for mapping lat/lon onto the grid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBounds {
    pub fn validate(&self) -> Result<(), DemandError> {
        if self.lat_min < self.lat_max && self.lon_min < self.lon_max {
            Ok(())
        } else {
            Err(DemandError::EmptyBounds)
        }
    }
}

/// Expected request counts between ordered cell pairs for one slice. Absent
/// pairs mean weight zero; self-loops are always zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RequestGraph {
    slice_start: Option<NaiveDateTime>,
    rows: BTreeMap<CellId, BTreeMap<CellId, f64>>,
}

impl RequestGraph {
    pub fn new(slice_start: NaiveDateTime) -> RequestGraph {
        RequestGraph {
            slice_start: Some(slice_start),
            rows: BTreeMap::new(),
        }
    }

    /// An all-zero graph with no particular slice attached.
    pub fn zero() -> RequestGraph {
        RequestGraph::default()
    }

    pub fn slice_start(&self) -> Option<NaiveDateTime> {
        self.slice_start
    }

    /// Accumulates weight onto a pair. Self-loops and zero increments are
    /// dropped; negative weights are a caller bug.
    pub fn add(&mut self, from: CellId, to: CellId, w: f64) {
        assert!(w >= 0.0, "request weights are nonnegative (got {w})");
        if from == to || w == 0.0 {
            return;
        }
        *self.rows.entry(from).or_default().entry(to).or_insert(0.0) += w;
    }

    pub fn weight(&self, from: CellId, to: CellId) -> f64 {
        if from == to {
            return 0.0;
        }
        self.rows
            .get(&from)
            .and_then(|r| r.get(&to))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total expected requests originating at a cell.
    pub fn outgoing_total(&self, from: CellId) -> f64 {
        self.rows
            .get(&from)
            .map(|r| r.values().sum())
            .unwrap_or(0.0)
    }

    /// Nonzero destinations from a cell, ascending by cell id.
    pub fn row(&self, from: CellId) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.rows
            .get(&from)
            .into_iter()
            .flat_map(|r| r.iter().map(|(&c, &w)| (c, w)))
    }

    pub fn pair_count(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    /// Parses the request-list text format: a `cells m` header followed by
    /// `i j w` lines where `w` is a nonnegative real.
    pub fn parse_request_list(text: &str) -> Result<RequestGraph, String> {
        let mut cells: Option<u32> = None;
        let mut graph = RequestGraph::zero();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match (cells, toks.as_slice()) {
                (None, ["cells", m]) => {
                    cells = Some(m.parse().map_err(|_| format!("line {}: bad cell count", idx + 1))?)
                }
                (None, _) => return Err(format!("line {}: expected `cells m` header", idx + 1)),
                (Some(m), [i, j, w]) => {
                    let parse_cell = |t: &str| -> Result<CellId, String> {
                        let v: u32 = t.parse().map_err(|_| format!("line {}: bad cell id", idx + 1))?;
                        if v >= m {
                            return Err(format!("line {}: cell {v} out of range", idx + 1));
                        }
                        Ok(CellId(v))
                    };
                    let w: f64 = w.parse().map_err(|_| format!("line {}: bad weight", idx + 1))?;
                    if w < 0.0 {
                        return Err(format!("line {}: negative weight", idx + 1));
                    }
                    graph.add(parse_cell(i)?, parse_cell(j)?, w);
                }
                (Some(_), _) => return Err(format!("line {}: expected `i j w`", idx + 1)),
            }
        }
        if cells.is_none() {
            return Err("missing `cells m` header".into());
        }
        Ok(graph)
    }
}

/// Maps a lat/lon point to its grid cell by uniform binning of the bounding
/// box. Bins are half-open: a point exactly on an interior boundary belongs
/// to the higher-index cell, and the box's max edges are outside. Returns
/// `None` for out-of-bounds points.
pub fn bin_point(spec: &GridSpec, bounds: &GeoBounds, lat: f64, lon: f64) -> Option<CellId> {
    if lat < bounds.lat_min || lon < bounds.lon_min {
        return None;
    }
    let row = ((lat - bounds.lat_min) / (bounds.lat_max - bounds.lat_min) * spec.rows as f64)
        .floor() as i64;
    let col = ((lon - bounds.lon_min) / (bounds.lon_max - bounds.lon_min) * spec.cols as f64)
        .floor() as i64;
    if row < 0 || col < 0 || row >= spec.rows as i64 || col >= spec.cols as i64 {
        return None;
    }
    Some(spec.cell_at(row as u32, col as u32))
}

/// Counters reported by ingestion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IngestStats {
    pub kept: usize,
    pub dropped_out_of_bounds: usize,
    pub dropped_zero_length: usize,
    pub malformed: usize,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

/// Reads trip records from CSV with columns `pickup_datetime, pickup_lat,
/// pickup_lon, dropoff_lat, dropoff_lon, passenger_count`. Malformed rows are
/// skipped and counted; records outside the bounding box or with identical
/// pickup and dropoff cells are dropped and counted. An empty result is an
/// error.
pub fn ingest_trips<R: io::Read>(
    reader: R,
    spec: &GridSpec,
    bounds: &GeoBounds,
) -> Result<(Vec<TripRecord>, IngestStats), DemandError> {
    bounds.validate()?;
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| -> Result<usize, DemandError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DemandError::MissingColumn(name.to_string()))
    };
    let c_time = col("pickup_datetime")?;
    let c_plat = col("pickup_lat")?;
    let c_plon = col("pickup_lon")?;
    let c_dlat = col("dropoff_lat")?;
    let c_dlon = col("dropoff_lon")?;
    let c_count = col("passenger_count")?;

    let mut stats = IngestStats::default();
    let mut out = Vec::new();
    for record in csv.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        let field = |i: usize| record.get(i).map(str::trim);
        let parsed = (|| {
            let time = parse_timestamp(field(c_time)?)?;
            let plat: f64 = field(c_plat)?.parse().ok()?;
            let plon: f64 = field(c_plon)?.parse().ok()?;
            let dlat: f64 = field(c_dlat)?.parse().ok()?;
            let dlon: f64 = field(c_dlon)?.parse().ok()?;
            let count: u32 = field(c_count)?.parse().ok()?;
            if count == 0 {
                return None;
            }
            Some((time, plat, plon, dlat, dlon, count))
        })();
        let Some((time, plat, plon, dlat, dlon, count)) = parsed else {
            stats.malformed += 1;
            continue;
        };
        let (Some(pickup), Some(dropoff)) = (
            bin_point(spec, bounds, plat, plon),
            bin_point(spec, bounds, dlat, dlon),
        ) else {
            stats.dropped_out_of_bounds += 1;
            continue;
        };
        if pickup == dropoff {
            stats.dropped_zero_length += 1;
            continue;
        }
        out.push(TripRecord {
            pickup_time: time,
            pickup_cell: pickup,
            dropoff_cell: dropoff,
            passenger_count: count,
        });
        stats.kept += 1;
    }
    if out.is_empty() {
        return Err(DemandError::NoRecords);
    }
    Ok((out, stats))
}

/// Index of the 15-minute slice within a day, in `[0, 96)`.
pub fn slice_of_day(t: NaiveDateTime) -> u32 {
    (t.time().hour() * 60 + t.time().minute()) / SLICE_MINUTES
}

/// Truncates a timestamp down to its slice boundary.
pub fn slice_floor(t: NaiveDateTime) -> NaiveDateTime {
    let minute = t.time().minute() - t.time().minute() % SLICE_MINUTES;
    t.date()
        .and_time(NaiveTime::from_hms_opt(t.time().hour(), minute, 0).unwrap())
}

/// Historical-average predictor: the expected weight of pair `(i, j)` is the
/// mean count of trips `i -> j` over all prior slices that share the same
/// slice-of-day index, averaged across the calendar days spanned by the
/// history. Deterministic given the history; with no prior matching slices
/// the graph is all zeros.
pub fn predict(
    history: &[TripRecord],
    slice_start: NaiveDateTime,
    horizon_slices: u32,
) -> RequestGraph {
    let mut graph = RequestGraph::new(slice_start);
    if history.is_empty() {
        return graph;
    }
    let first_day = history.iter().map(|r| r.pickup_time.date()).min().unwrap();
    let last_day = history.iter().map(|r| r.pickup_time.date()).max().unwrap();

    for h in 0..horizon_slices {
        let target = slice_start + chrono::Duration::minutes((h * SLICE_MINUTES) as i64);
        let target_sod = slice_of_day(target);
        let slice_time = NaiveTime::from_hms_opt(
            target_sod * SLICE_MINUTES / 60,
            target_sod * SLICE_MINUTES % 60,
            0,
        )
        .unwrap();

        // prior occurrences of this slice-of-day within the observed span
        let mut day = first_day;
        let mut occurrences = 0u32;
        while day <= last_day {
            if day.and_time(slice_time) < slice_start {
                occurrences += 1;
            }
            day = day.succ_opt().unwrap();
        }
        if occurrences == 0 {
            continue;
        }

        let mut counts: BTreeMap<(CellId, CellId), u32> = BTreeMap::new();
        for r in history {
            let slot = slice_floor(r.pickup_time);
            if slot.time() == slice_time && slot < slice_start {
                *counts.entry((r.pickup_cell, r.dropoff_cell)).or_insert(0) += 1;
            }
        }
        for ((i, j), c) in counts {
            graph.add(i, j, c as f64 / occurrences as f64);
        }
    }
    graph
}

/// Identity predictor: the predicted graph is exactly the actual arrival
/// counts of the target window. Used to isolate routing quality from
/// prediction error.
pub fn oracle_replay(
    actual: &[TripRecord],
    slice_start: NaiveDateTime,
    horizon_slices: u32,
) -> RequestGraph {
    let end = slice_start + chrono::Duration::minutes((horizon_slices * SLICE_MINUTES) as i64);
    let mut graph = RequestGraph::new(slice_start);
    for r in actual {
        if r.pickup_time >= slice_start && r.pickup_time < end {
            graph.add(r.pickup_cell, r.dropoff_cell, 1.0);
        }
    }
    graph
}

/// A demand bump centered on a cell: both the outgoing request rate and the
/// destination attraction fall off as a Gaussian of the grid distance.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hotspot {
    pub cell: CellId,
    pub rate_peak: f64,
    pub attract_peak: f64,
    pub sigma: f64,
}

/// Synthetic demand field over a grid. The rate of pair `(i, j)` splits the
/// outgoing rate of `i` across destinations proportionally to their
/// attraction, damped by trip locality when `trip_radius` is set (trips
/// mostly end near where they start). Explicit extra pairs are added on top,
/// and everything scales with the time-of-day curve.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthProfile {
    pub grid: GridSpec,
    pub base_rate: f64,
    pub base_attraction: f64,
    #[serde(default)]
    pub hotspots: Vec<Hotspot>,
    #[serde(default)]
    pub tod_curve: Vec<f64>,
    #[serde(default)]
    pub extra_pairs: Vec<(CellId, CellId, f64)>,
    /// Gaussian radius of trip lengths in cells; `None` means destinations
    /// are drawn grid-wide.
    #[serde(default)]
    pub trip_radius: Option<f64>,
}

impl SynthProfile {
    fn gauss_sum(&self, cell: CellId, peak: impl Fn(&Hotspot) -> f64) -> f64 {
        let (r, c) = self.grid.coords(cell);
        self.hotspots
            .iter()
            .map(|h| {
                let (hr, hc) = self.grid.coords(h.cell);
                let d2 = (r as f64 - hr as f64).powi(2) + (c as f64 - hc as f64).powi(2);
                peak(h) * (-d2 / (2.0 * h.sigma * h.sigma)).exp()
            })
            .sum()
    }

    pub fn tod_multiplier(&self, slice: u32) -> f64 {
        if self.tod_curve.is_empty() {
            1.0
        } else {
            self.tod_curve[(slice as usize) % self.tod_curve.len()]
        }
    }

    /// Expected requests originating at a cell in one slice.
    pub fn origin_rate(&self, cell: CellId, slice: u32) -> f64 {
        (self.base_rate + self.gauss_sum(cell, |h| h.rate_peak)) * self.tod_multiplier(slice)
    }

    pub fn attraction(&self, cell: CellId) -> f64 {
        self.base_attraction + self.gauss_sum(cell, |h| h.attract_peak)
    }

    /// The per-pair rate map for a slice; doubles as the exact-in-expectation
    /// prediction for that slice.
    pub fn rates(&self, slice: u32) -> RequestGraph {
        let m = self.grid.cells();
        let epoch = synthetic_epoch() + chrono::Duration::minutes((slice * SLICE_MINUTES) as i64);
        let mut graph = RequestGraph::new(epoch);
        let attraction: Vec<f64> = (0..m).map(|c| self.attraction(CellId(c))).collect();
        let coords: Vec<(f64, f64)> = (0..m)
            .map(|c| {
                let (r, co) = self.grid.coords(CellId(c));
                (r as f64, co as f64)
            })
            .collect();
        let tod = self.tod_multiplier(slice);
        for i in 0..m {
            let rate = self.origin_rate(CellId(i), slice);
            if rate <= 0.0 {
                continue;
            }
            let pull = |j: u32| -> f64 {
                let a = attraction[j as usize];
                match self.trip_radius {
                    Some(r) => {
                        let d2 = (coords[i as usize].0 - coords[j as usize].0).powi(2)
                            + (coords[i as usize].1 - coords[j as usize].1).powi(2);
                        a * (-d2 / (2.0 * r * r)).exp()
                    }
                    None => a,
                }
            };
            let denom: f64 = (0..m).filter(|&j| j != i).map(pull).sum();
            if denom <= 0.0 {
                continue;
            }
            for j in 0..m {
                if i == j {
                    continue;
                }
                let w = rate * pull(j) / denom;
                if w > 1e-12 {
                    graph.add(CellId(i), CellId(j), w);
                }
            }
        }
        for &(i, j, w) in &self.extra_pairs {
            graph.add(i, j, w * tod);
        }
        graph
    }
}

/// Draws the actual ride orders of one slice: independent Poisson counts per
/// pair with the profile's rates, each order's detour threshold uniform in
/// `[1, 2]`. Identical `(profile, seed, slice)` produce identical output.
pub fn synth_demand(profile: &SynthProfile, seed: u64, slice: u32) -> (RequestGraph, Vec<RideOrder>) {
    let graph = profile.rates(slice);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slice as u64);
    let mut orders = Vec::new();
    let mut seq: u64 = 0;
    let requested_at = (slice * SLICE_MINUTES) as u64;
    for i in 0..profile.grid.cells() {
        for (j, rate) in graph.row(CellId(i)) {
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64;
            for _ in 0..count {
                let id = OrderId(((slice as u64) << 32) | seq);
                seq += 1;
                let t_d = rng.random_range(1.0..=2.0);
                orders.push(RideOrder::new(id, CellId(i), j, requested_at, t_d));
            }
        }
    }
    (graph, orders)
}
