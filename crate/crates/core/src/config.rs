//! World configuration: the typed config consumed by the simulator, its
//! validation, and TOML loading with file references resolved and inlined so
//! a run manifest fully reproduces the run.

use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demand::{GeoBounds, SynthProfile, SLICE_MINUTES};
use crate::econ::FareParams;
use crate::fairness::RelocationParams;
use crate::grid::{GridSpec, RoadGraph, DEFAULT_CELL_SIZE_MILES};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {msg}")]
    Field { field: String, msg: String },
}

fn field_err(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        msg: msg.to_string(),
    }
}

/// Routing and fairness policy of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// DP routing with priority scheduling and relocation.
    FairnessOn,
    /// DP routing, first-come-first-served by driver id, no relocation.
    FcfsDp,
    /// Greedy routing baseline, no fairness layer.
    Greedy,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "fairness_on" => Some(Policy::FairnessOn),
            "fcfs_dp" => Some(Policy::FcfsDp),
            "greedy" => Some(Policy::Greedy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::FairnessOn => "fairness_on",
            Policy::FcfsDp => "fcfs_dp",
            Policy::Greedy => "greedy",
        }
    }
}

/// Where the road network comes from.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum GridSource {
    Grid(GridSpec),
    /// Explicit edge-list text (file contents are inlined at load time).
    EdgeList { text: String },
}

/// Initial driver placement.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Placement {
    /// Deterministically spread across the cell range.
    Spread,
    Cells(Vec<u32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Historical,
    Oracle,
}

/// One pre-scheduled order of a scripted scenario.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScriptedOrder {
    pub slice: u32,
    pub from: u32,
    pub to: u32,
    pub t_d: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DemandSpec {
    Synthetic(SynthProfile),
    /// Fixed prediction graph plus an explicit order list.
    Scripted {
        request_list: String,
        orders: Vec<ScriptedOrder>,
    },
    /// Replay of ingested trip records.
    Csv {
        path: String,
        bounds: GeoBounds,
        /// Run start timestamp (ISO-8601), aligned to a slice boundary.
        start: String,
        predictor: PredictorKind,
    },
}

/// Full description of one simulation run.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub duration_slices: u32,
    pub policy: Policy,
    pub grid: GridSource,
    pub cell_size_miles: f64,
    pub fleet_size: u32,
    pub capacity: usize,
    pub placement: Placement,
    pub minutes_per_cell: u32,
    /// Detour threshold used when planning routes for anticipated riders.
    pub route_detour: f64,
    pub relocation: RelocationParams,
    pub fare: FareParams,
    /// Waiting orders expire after this many slices.
    pub expiry_slices: u32,
    pub demand: DemandSpec,
}

impl WorldConfig {
    /// A config with spec defaults for everything except grid, fleet and
    /// demand.
    pub fn new(grid: GridSource, fleet_size: u32, demand: DemandSpec) -> WorldConfig {
        let cell_size = match &grid {
            GridSource::Grid(s) => s.cell_size_miles,
            GridSource::EdgeList { .. } => DEFAULT_CELL_SIZE_MILES,
        };
        WorldConfig {
            seed: 0,
            duration_slices: 1,
            policy: Policy::FcfsDp,
            grid,
            cell_size_miles: cell_size,
            fleet_size,
            capacity: 3,
            placement: Placement::Spread,
            minutes_per_cell: 3,
            route_detour: 1.5,
            relocation: RelocationParams::default(),
            fare: FareParams::default(),
            expiry_slices: 4,
            demand,
        }
    }

    /// Builds the road graph this config describes.
    pub fn build_road(&self) -> Result<RoadGraph, ConfigError> {
        match &self.grid {
            GridSource::Grid(spec) => crate::grid::build_grid(GridSpec {
                cell_size_miles: self.cell_size_miles,
                ..*spec
            })
            .map_err(|e| field_err("grid", e)),
            GridSource::EdgeList { text } => RoadGraph::parse_edge_list(text, self.cell_size_miles)
                .map_err(|e| field_err("grid.road_file", e)),
        }
    }

    pub fn moves_per_slice(&self) -> u32 {
        SLICE_MINUTES / self.minutes_per_cell
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.minutes_per_cell == 0 || SLICE_MINUTES % self.minutes_per_cell != 0 {
            return Err(field_err(
                "fleet.minutes_per_cell",
                format!(
                    "must divide the {SLICE_MINUTES}-minute slice (got {})",
                    self.minutes_per_cell
                ),
            ));
        }
        if !(1..=6).contains(&self.capacity) {
            return Err(field_err(
                "fleet.capacity",
                format!("must be in 1..=6, got {}", self.capacity),
            ));
        }
        if self.fleet_size == 0 {
            return Err(field_err("fleet.size", "must be at least 1"));
        }
        if !(self.cell_size_miles > 0.0) {
            return Err(field_err("grid.cell_size_miles", "must be positive"));
        }
        if !(1.0..=4.0).contains(&self.route_detour) {
            return Err(field_err("run.route_detour", "must be in [1, 4]"));
        }
        if !(0.0..=1.0).contains(&self.relocation.fraction) {
            return Err(field_err("fairness.relocate_fraction", "must be in [0, 1]"));
        }
        if self.relocation.future_threshold < 0.0 {
            return Err(field_err(
                "fairness.future_demand_threshold",
                "must be nonnegative",
            ));
        }
        let road = self.build_road()?;
        let m = road.cell_count();
        if let Placement::Cells(cells) = &self.placement {
            if cells.len() != self.fleet_size as usize {
                return Err(field_err(
                    "fleet.cells",
                    format!("expected {} cells, got {}", self.fleet_size, cells.len()),
                ));
            }
            if let Some(&bad) = cells.iter().find(|&&c| c >= m) {
                return Err(field_err(
                    "fleet.cells",
                    format!("cell {bad} out of range (grid has {m} cells)"),
                ));
            }
        }
        match &self.demand {
            DemandSpec::Synthetic(profile) => {
                let gm = profile.grid.cells();
                if gm != m {
                    return Err(field_err(
                        "demand.synthetic",
                        format!("profile grid has {gm} cells but the world grid has {m}"),
                    ));
                }
                if profile.base_rate < 0.0 || profile.base_attraction < 0.0 {
                    return Err(field_err("demand.synthetic", "rates must be nonnegative"));
                }
                for h in &profile.hotspots {
                    if h.cell.0 >= m {
                        return Err(field_err("demand.synthetic.hotspots", "cell out of range"));
                    }
                    if h.rate_peak < 0.0 || h.attract_peak < 0.0 || !(h.sigma > 0.0) {
                        return Err(field_err(
                            "demand.synthetic.hotspots",
                            "peaks must be nonnegative and sigma positive",
                        ));
                    }
                }
                if profile.tod_curve.iter().any(|&x| x < 0.0) {
                    return Err(field_err("demand.synthetic.tod_curve", "must be nonnegative"));
                }
                if let Some(r) = profile.trip_radius {
                    if !(r > 0.0) {
                        return Err(field_err("demand.synthetic.trip_radius", "must be positive"));
                    }
                }
                for &(a, b, w) in &profile.extra_pairs {
                    if a.0 >= m || b.0 >= m || a == b || w < 0.0 {
                        return Err(field_err(
                            "demand.synthetic.extra_pairs",
                            "pairs need distinct in-range cells and nonnegative rates",
                        ));
                    }
                }
            }
            DemandSpec::Scripted { request_list, orders } => {
                crate::demand::RequestGraph::parse_request_list(request_list)
                    .map_err(|e| field_err("demand.scripted.request_file", e))?;
                for o in orders {
                    if o.from >= m || o.to >= m || o.from == o.to {
                        return Err(field_err(
                            "demand.scripted.orders",
                            format!("order {}->{} needs distinct in-range cells", o.from, o.to),
                        ));
                    }
                    if o.t_d < 1.0 {
                        return Err(field_err(
                            "demand.scripted.orders",
                            "detour thresholds must be at least 1",
                        ));
                    }
                }
            }
            DemandSpec::Csv { bounds, start, predictor: _, path: _ } => {
                if !matches!(self.grid, GridSource::Grid(_)) {
                    return Err(field_err(
                        "demand.csv",
                        "csv replay needs a generated grid for lat/lon binning",
                    ));
                }
                bounds.validate().map_err(|e| field_err("demand.csv", e))?;
                parse_start(start).ok_or_else(|| {
                    field_err("demand.csv.start", "expected an ISO-8601 timestamp")
                })?;
            }
        }
        Ok(())
    }

    /// Hash of the full effective config.
    pub fn sha256(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of everything that determines the order stream and the road
    /// graph, but not the policy knobs: runs comparing policies must share
    /// this fingerprint.
    pub fn demand_fingerprint(&self) -> String {
        let key = (
            &self.grid,
            self.cell_size_miles,
            &self.demand,
            self.seed,
            self.duration_slices,
            self.expiry_slices,
        );
        hex_digest(&serde_json::to_vec(&key).expect("fingerprint serializes"))
    }
}

pub(crate) fn parse_start(s: &str) -> Option<chrono::NaiveDateTime> {
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// TOML loading

#[derive(serde::Deserialize)]
struct RawConfig {
    run: RawRun,
    grid: RawGrid,
    fleet: RawFleet,
    #[serde(default)]
    fairness: RawFairness,
    #[serde(default)]
    fare: Option<FareParams>,
    #[serde(default)]
    orders: RawOrders,
    demand: RawDemand,
}

#[derive(serde::Deserialize)]
struct RawRun {
    seed: u64,
    duration_slices: u32,
    policy: Policy,
    #[serde(default)]
    out_dir: Option<String>,
    #[serde(default)]
    route_detour: Option<f64>,
}

#[derive(serde::Deserialize)]
struct RawGrid {
    #[serde(default)]
    rows: Option<u32>,
    #[serde(default)]
    cols: Option<u32>,
    #[serde(default)]
    cell_size_miles: Option<f64>,
    #[serde(default)]
    road_file: Option<String>,
}

#[derive(serde::Deserialize)]
struct RawFleet {
    size: u32,
    #[serde(default)]
    capacity: Option<usize>,
    #[serde(default)]
    minutes_per_cell: Option<u32>,
    #[serde(default)]
    cells: Option<Vec<u32>>,
}

#[derive(serde::Deserialize, Default)]
struct RawFairness {
    #[serde(default)]
    relocate_fraction: Option<f64>,
    #[serde(default)]
    future_demand_threshold: Option<f64>,
}

#[derive(serde::Deserialize, Default)]
struct RawOrders {
    #[serde(default)]
    expiry_slices: Option<u32>,
}

#[derive(serde::Deserialize)]
struct RawDemand {
    kind: String,
    #[serde(default)]
    synthetic: Option<RawSynth>,
    #[serde(default)]
    csv: Option<RawCsv>,
    #[serde(default)]
    scripted: Option<RawScripted>,
}

#[derive(serde::Deserialize)]
struct RawSynth {
    base_rate: f64,
    base_attraction: f64,
    #[serde(default)]
    hotspots: Vec<RawHotspot>,
    #[serde(default)]
    tod_curve: Vec<f64>,
    #[serde(default)]
    extra_pairs: Vec<RawPair>,
    #[serde(default)]
    trip_radius: Option<f64>,
}

#[derive(serde::Deserialize)]
struct RawHotspot {
    cell: u32,
    rate_peak: f64,
    attract_peak: f64,
    sigma: f64,
}

#[derive(serde::Deserialize)]
struct RawPair {
    from: u32,
    to: u32,
    rate: f64,
}

#[derive(serde::Deserialize)]
struct RawCsv {
    path: String,
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
    start: String,
    predictor: PredictorKind,
}

#[derive(serde::Deserialize)]
struct RawScripted {
    request_file: String,
    orders: Vec<ScriptedOrder>,
}

/// A loaded config plus the output directory requested by the file.
#[derive(Debug)]
pub struct LoadedConfig {
    pub world: WorldConfig,
    pub out_dir: Option<PathBuf>,
}

/// Reads and validates a TOML config. Referenced road and request files are
/// resolved relative to the config file and inlined.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawConfig = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let read_rel = |rel: &str| -> Result<String, ConfigError> {
        let p = base.join(rel);
        std::fs::read_to_string(&p).map_err(|source| ConfigError::Io { path: p, source })
    };

    let cell_size = raw.grid.cell_size_miles.unwrap_or(DEFAULT_CELL_SIZE_MILES);
    let grid = match (&raw.grid.rows, &raw.grid.cols, &raw.grid.road_file) {
        (Some(r), Some(c), None) => GridSource::Grid(GridSpec::with_cell_size(*r, *c, cell_size)),
        (None, None, Some(file)) => GridSource::EdgeList {
            text: read_rel(file)?,
        },
        _ => {
            return Err(field_err(
                "grid",
                "specify either rows+cols or road_file, not both",
            ))
        }
    };
    let grid_spec = match &grid {
        GridSource::Grid(s) => Some(*s),
        GridSource::EdgeList { .. } => None,
    };

    let demand = match raw.demand.kind.as_str() {
        "synthetic" => {
            let s = raw
                .demand
                .synthetic
                .ok_or_else(|| field_err("demand.synthetic", "missing section"))?;
            let spec = grid_spec.ok_or_else(|| {
                field_err("demand.synthetic", "synthetic demand needs a generated grid")
            })?;
            DemandSpec::Synthetic(SynthProfile {
                grid: spec,
                base_rate: s.base_rate,
                base_attraction: s.base_attraction,
                hotspots: s
                    .hotspots
                    .into_iter()
                    .map(|h| crate::demand::Hotspot {
                        cell: crate::grid::CellId(h.cell),
                        rate_peak: h.rate_peak,
                        attract_peak: h.attract_peak,
                        sigma: h.sigma,
                    })
                    .collect(),
                tod_curve: s.tod_curve,
                extra_pairs: s
                    .extra_pairs
                    .into_iter()
                    .map(|p| (crate::grid::CellId(p.from), crate::grid::CellId(p.to), p.rate))
                    .collect(),
                trip_radius: s.trip_radius,
            })
        }
        "scripted" => {
            let s = raw
                .demand
                .scripted
                .ok_or_else(|| field_err("demand.scripted", "missing section"))?;
            DemandSpec::Scripted {
                request_list: read_rel(&s.request_file)?,
                orders: s.orders,
            }
        }
        "csv" => {
            let s = raw
                .demand
                .csv
                .ok_or_else(|| field_err("demand.csv", "missing section"))?;
            DemandSpec::Csv {
                path: base.join(&s.path).to_string_lossy().into_owned(),
                bounds: GeoBounds {
                    lat_min: s.lat_min,
                    lat_max: s.lat_max,
                    lon_min: s.lon_min,
                    lon_max: s.lon_max,
                },
                start: s.start,
                predictor: s.predictor,
            }
        }
        other => {
            return Err(field_err(
                "demand.kind",
                format!("unknown kind {other:?} (synthetic|scripted|csv)"),
            ))
        }
    };

    let placement = match raw.fleet.cells {
        Some(cells) => Placement::Cells(cells),
        None => Placement::Spread,
    };
    let world = WorldConfig {
        seed: raw.run.seed,
        duration_slices: raw.run.duration_slices,
        policy: raw.run.policy,
        grid,
        cell_size_miles: cell_size,
        fleet_size: raw.fleet.size,
        capacity: raw.fleet.capacity.unwrap_or(3),
        placement,
        minutes_per_cell: raw.fleet.minutes_per_cell.unwrap_or(3),
        route_detour: raw.run.route_detour.unwrap_or(1.5),
        relocation: RelocationParams {
            fraction: raw.fairness.relocate_fraction.unwrap_or(0.7),
            future_threshold: raw.fairness.future_demand_threshold.unwrap_or(1.0),
        },
        fare: raw.fare.unwrap_or_default(),
        expiry_slices: raw.orders.expiry_slices.unwrap_or(4),
        demand,
    };
    world.validate()?;
    Ok(LoadedConfig {
        world,
        out_dir: raw.run.out_dir.map(|d| base.join(d)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::SynthProfile;

    fn synth_cfg() -> WorldConfig {
        let spec = GridSpec::new(4, 4);
        WorldConfig::new(
            GridSource::Grid(spec),
            2,
            DemandSpec::Synthetic(SynthProfile {
                grid: spec,
                base_rate: 0.1,
                base_attraction: 1.0,
                hotspots: vec![],
                tod_curve: vec![],
                extra_pairs: vec![],
                trip_radius: None,
            }),
        )
    }

    #[test]
    fn default_config_validates() {
        synth_cfg().validate().unwrap();
    }

    #[test]
    fn movement_granularity_must_divide_the_slice() {
        let mut cfg = synth_cfg();
        cfg.minutes_per_cell = 4;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("minutes_per_cell"));
    }

    #[test]
    fn placement_cells_checked_against_grid() {
        let mut cfg = synth_cfg();
        cfg.placement = Placement::Cells(vec![0, 99]);
        assert!(cfg.validate().is_err());
        cfg.placement = Placement::Cells(vec![0]);
        assert!(cfg.validate().is_err());
        cfg.placement = Placement::Cells(vec![0, 15]);
        cfg.validate().unwrap();
    }

    #[test]
    fn fingerprint_ignores_policy_but_not_seed() {
        let mut a = synth_cfg();
        let mut b = synth_cfg();
        a.policy = Policy::FairnessOn;
        b.policy = Policy::Greedy;
        assert_eq!(a.demand_fingerprint(), b.demand_fingerprint());
        assert_ne!(a.sha256(), b.sha256());
        b.seed = 1;
        assert_ne!(a.demand_fingerprint(), b.demand_fingerprint());
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
[run]
seed = 7
duration_slices = 4
policy = "fairness_on"

[grid]
rows = 4
cols = 4

[fleet]
size = 3

[demand]
kind = "synthetic"

[demand.synthetic]
base_rate = 0.05
base_attraction = 1.0
hotspots = [{ cell = 5, rate_peak = 1.0, attract_peak = 1.0, sigma = 1.5 }]
"#,
        )
        .unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.world.seed, 7);
        assert_eq!(loaded.world.capacity, 3);
        assert_eq!(loaded.world.minutes_per_cell, 3);
        assert_eq!(loaded.world.policy, Policy::FairnessOn);
        assert_eq!(loaded.world.relocation.fraction, 0.7);
        assert!(loaded.out_dir.is_none());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }
}
