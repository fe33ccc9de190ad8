//! Deterministic grid-world ridesharing simulator and routing library.
//!
//! The library models a service area as a grid of cells with 8-connectivity
//! ([`grid`]), predicts or synthesizes origin-destination ride demand per
//! 15-minute slice ([`demand`]), and recommends driver routes by solving a
//! detour-constrained maximum-expected-requests path problem with dynamic
//! programming on a forward-edge DAG ([`route`]). Drivers accept ride orders
//! along their recommended route subject to vehicle capacity and per-rider
//! detour thresholds ([`matching`]), earn fares with a pooling discount
//! ([`econ`]), and a fairness layer equalizes utility-per-hour across the
//! fleet through priority scheduling and destination-aware relocation
//! ([`fairness`]). The discrete-time world that ties it all together lives in
//! [`sim`].
//!
//! Everything is deterministic: the same configuration and seed produce
//! byte-identical event logs and metrics files.

pub mod bench;
pub mod config;
pub mod demand;
pub mod econ;
pub mod fairness;
pub mod fixtures;
pub mod grid;
pub mod matching;
pub mod route;
pub mod sim;

pub use config::WorldConfig;
pub use grid::{CellId, GridSpec, RoadGraph};
pub use route::Route;
pub use sim::{MetricsReport, World};

use std::fmt;

/// Identifier for a driver in the fleet.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct DriverId(pub u32);

impl fmt::Display for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// Identifier for a ride order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct OrderId(pub u64);

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}
