//! Trip fares, pooled-ride revenue and driver ledgers.
//!
//! Money is an exact decimal with 4 fractional digits so that ledgers replay
//! bit-exactly across runs.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum EconError {
    #[error("a ride must have at least one fare")]
    EmptyFareList,
}

/// Fixed-point money amount in units of 1e-4.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

const SCALE: i64 = 10_000;

impl Money {
    pub const ZERO: Money = Money(0);

    /// Rounds to the nearest 1e-4 unit, ties away from zero.
    pub fn from_f64(x: f64) -> Money {
        Money((x * SCALE as f64).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn from_raw(raw: i64) -> Money {
        Money(raw)
    }

    pub fn raw(self) -> i64 {
        self.0
    }

    /// Multiplies by a real scalar, rounding to the nearest unit.
    pub fn mul_f64(self, k: f64) -> Money {
        Money((self.0 as f64 * k).round() as i64)
    }

    pub fn max(self, other: Money) -> Money {
        Money(self.0.max(other.0))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:04}", abs / SCALE as u64, abs % SCALE as u64)
    }
}

impl fmt::Debug for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${self}")
    }
}

impl serde::Serialize for Money {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> serde::Deserialize<'de> for Money {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Money, D::Error> {
        Ok(Money::from_f64(f64::deserialize(d)?))
    }
}

/// Fare model parameters: base fare, minimum fare, per-mile and per-minute
/// rates, and the per-mile operating cost charged against drivers.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FareParams {
    pub base: Money,
    pub minimum: Money,
    pub per_mile: Money,
    pub per_minute: Money,
    pub cost_per_mile: Money,
}

impl Default for FareParams {
    fn default() -> FareParams {
        FareParams {
            base: Money::from_f64(2.55),
            minimum: Money::from_f64(7.0),
            per_mile: Money::from_f64(1.75),
            per_minute: Money::from_f64(0.35),
            cost_per_mile: Money::from_f64(0.13),
        }
    }
}

/// Fare of one served order: `max(minimum, base + miles * per_mile +
/// minutes * per_minute)`.
pub fn trip_fare(p: &FareParams, miles: f64, minutes: f64) -> Money {
    debug_assert!(miles >= 0.0 && minutes >= 0.0);
    let metered = p.base + p.per_mile.mul_f64(miles) + p.per_minute.mul_f64(minutes);
    p.minimum.max(metered)
}

/// Revenue of a ride. Pooling more than one order into a ride discounts every
/// fare by 20%; a solo ride pays the full fare.
pub fn ride_revenue(fares: &[Money]) -> Result<Money, EconError> {
    match fares {
        [] => Err(EconError::EmptyFareList),
        [single] => Ok(*single),
        many => {
            let total: Money = many.iter().copied().sum();
            // exact 0.8 factor: *4/5 with round-half-away on the remainder
            let num = total.raw() * 4;
            let rounded = (num + num.signum() * 2) / 5;
            Ok(Money::from_raw(rounded))
        }
    }
}

/// One service episode of a driver: the orders it pooled, the distance it
/// drove and the resulting revenue. Episodes with no served orders (empty
/// repositioning) have zero revenue but still carry distance cost.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RideRecord {
    pub fares: Vec<Money>,
    pub order_count: usize,
    pub miles: f64,
    pub revenue: Money,
}

impl RideRecord {
    pub fn close(fares: Vec<Money>, miles: f64) -> RideRecord {
        let revenue = if fares.is_empty() {
            Money::ZERO
        } else {
            ride_revenue(&fares).expect("nonempty fare list")
        };
        RideRecord {
            order_count: fares.len(),
            fares,
            miles,
            revenue,
        }
    }
}

/// Economic record of one driver: completed rides, cumulative utility and
/// on-duty time.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct DriverLedger {
    pub rides: Vec<RideRecord>,
    pub cumulative_utility: Money,
    pub active_minutes: u64,
}

impl DriverLedger {
    pub fn push_ride(&mut self, record: RideRecord, cost_per_mile: Money) {
        self.cumulative_utility += record.revenue - cost_per_mile.mul_f64(record.miles);
        self.rides.push(record);
    }

    pub fn ride_count(&self) -> usize {
        self.rides.len()
    }

    pub fn active_hours(&self) -> f64 {
        self.active_minutes as f64 / 60.0
    }
}

/// Cumulative utility recomputed from the ride records: the sum over rides of
/// revenue minus distance cost. Must always equal the incrementally tracked
/// ledger value.
pub fn driver_utility(ledger: &DriverLedger, cost_per_mile: Money) -> Money {
    ledger
        .rides
        .iter()
        .map(|r| r.revenue - cost_per_mile.mul_f64(r.miles))
        .sum()
}

/// Utility normalized by on-duty hours; 0 for a driver that just started.
pub fn utility_per_hour(ledger: &DriverLedger) -> f64 {
    if ledger.active_minutes == 0 {
        return 0.0;
    }
    ledger.cumulative_utility.to_f64() / ledger.active_hours()
}
