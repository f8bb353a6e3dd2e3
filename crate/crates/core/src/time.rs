//! Integer simulation time.
//!
//! One tick is one nanosecond. Durations written with a unit suffix
//! (`"0.624us"`, `"1ms"`, `"100s"`) are parsed with decimal arithmetic so
//! that every value that is a whole number of nanoseconds converts exactly.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::TimeParseError;

pub const NANOS_PER_US: u64 = 1_000;
pub const NANOS_PER_MS: u64 = 1_000_000;
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point in (or span of) simulated time, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * NANOS_PER_US)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * NANOS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "negative or non-finite time {s}");
        SimTime((s * NANOS_PER_SEC as f64).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_US as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    /// Time to send `bytes` at `rate_bps`, rounded up to whole nanoseconds.
    pub fn airtime(bytes: u64, rate_bps: u64) -> SimTime {
        debug_assert!(rate_bps > 0);
        let bits = bytes as u128 * 8 * NANOS_PER_SEC as u128;
        SimTime(bits.div_ceil(rate_bps as u128) as u64)
    }

    /// Whole bytes that fit in `self` at `rate_bps` (rounded down).
    pub fn bytes_at(self, rate_bps: u64) -> u64 {
        (self.0 as u128 * rate_bps as u128 / (8 * NANOS_PER_SEC as u128)) as u64
    }
}

/// Exact airtime in nanoseconds, without rounding to the tick grid.
pub fn airtime_ns_exact(bytes: u64, rate_bps: f64) -> f64 {
    bytes as f64 * 8.0 * 1e9 / rate_bps
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl FromStr for SimTime {
    type Err = TimeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_ascii_alphabetic() || c == 'µ')
            .unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let scale = match unit.trim() {
            "" | "ns" => 1,
            "us" | "µs" => NANOS_PER_US,
            "ms" => NANOS_PER_MS,
            "s" => NANOS_PER_SEC,
            other => return Err(TimeParseError::Unit(other.to_string())),
        };
        parse_decimal_scaled(num.trim(), scale)
            .map(SimTime)
            .ok_or_else(|| TimeParseError::Value(s.to_string()))
    }
}

/// `num * scale` for a non-negative decimal literal, exact or `None`.
fn parse_decimal_scaled(num: &str, scale: u64) -> Option<u64> {
    let (int_part, frac_part) = match num.split_once('.') {
        Some((i, f)) => (i, f),
        None => (num, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let int: u64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut total = int.checked_mul(scale)?;
    let mut place = scale;
    for d in frac_part.chars() {
        let digit = d.to_digit(10).unwrap() as u64;
        if place % 10 != 0 {
            // finer than one nanosecond
            if digit != 0 {
                return None;
            }
            continue;
        }
        place /= 10;
        total = total.checked_add(digit * place)?;
    }
    Some(total)
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SimTimeVisitor;

        impl Visitor<'_> for SimTimeVisitor {
            type Value = SimTime;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("nanoseconds as an integer or a string like \"0.624us\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SimTime, E> {
                Ok(SimTime(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SimTime, E> {
                u64::try_from(v)
                    .map(SimTime)
                    .map_err(|_| E::custom("time must be non-negative"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<SimTime, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(SimTimeVisitor)
    }
}
