use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const NS_PER_S: u128 = 1_000_000_000;

/// Simulated time in integer nanoseconds since run start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0 + ns)
    }
}

impl Sub for SimTime {
    type Output = u64;

    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration `{0}` (expected an integer with optional ns/us/ms/s suffix)")]
pub struct ParseDurationError(pub String);

/// Parses `"250"`, `"250ns"`, `"100us"`, `"100µs"`, `"10ms"` or `"1s"`.
impl FromStr for SimTime {
    type Err = ParseDurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let err = || ParseDurationError(s.to_string());
        let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
        let (digits, unit) = t.split_at(split);
        if digits.is_empty() {
            return Err(err());
        }
        let n: u64 = digits.parse().map_err(|_| err())?;
        let mult = match unit.trim() {
            "" | "ns" => 1,
            "us" | "µs" => 1_000,
            "ms" => 1_000_000,
            "s" => 1_000_000_000,
            _ => return Err(err()),
        };
        n.checked_mul(mult).map(SimTime).ok_or_else(err)
    }
}

/// A time carried exactly as `ns + rem / rate_bps`.
///
/// Serialization and pacing intervals are `bits / rate` seconds, which at
/// common rates are not whole nanoseconds. Senders keep the residue here and
/// only round when an event has to be scheduled. The denominator is the rate
/// of the clock that produced the value and is not stored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct FracTime {
    pub ns: u64,
    pub rem: u64,
}

impl FracTime {
    pub fn whole(t: SimTime) -> Self {
        FracTime {
            ns: t.as_ns(),
            rem: 0,
        }
    }

    /// Advances by the time `bits` take on a wire of `rate_bps`.
    pub fn add_bits(self, bits: u64, rate_bps: u64) -> Self {
        let num = bits as u128 * NS_PER_S + self.rem as u128;
        let rate = rate_bps as u128;
        FracTime {
            ns: self.ns + (num / rate) as u64,
            rem: (num % rate) as u64,
        }
    }

    /// Nearest nanosecond, halves rounded up.
    pub fn round(self, rate_bps: u64) -> SimTime {
        if self.rem as u128 * 2 >= rate_bps as u128 {
            SimTime(self.ns + 1)
        } else {
            SimTime(self.ns)
        }
    }

    pub fn ceil(self) -> SimTime {
        if self.rem > 0 {
            SimTime(self.ns + 1)
        } else {
            SimTime(self.ns)
        }
    }
}

/// Nanoseconds (rounded up) that `bits` occupy on a wire of `rate_bps`.
pub fn bit_time_ceil_ns(bits: u64, rate_bps: u64) -> u64 {
    let num = bits as u128 * NS_PER_S;
    num.div_ceil(rate_bps as u128) as u64
}
