//! Fixed-point weights.
//!
//! Entity weights, score sums and thresholds are all carried as integer
//! hundredths so that sums and threshold comparisons are exact.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fixed-point steps per unit.
pub const SCALE: i64 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("value {0} is not a multiple of 0.01")]
    NotHundredths(f64),
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error("cannot parse weight from {0:?}")]
    Parse(String),
}

/// A decimal quantity with two fractional digits, stored as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Weight(i64);

impl Weight {
    pub const ZERO: Weight = Weight(0);

    pub const fn from_hundredths(h: i64) -> Self {
        Weight(h)
    }

    pub const fn hundredths(self) -> i64 {
        self.0
    }

    /// Converts a float that should already sit on the 0.01 grid.
    pub fn from_f64(value: f64) -> Result<Self, WeightError> {
        if !value.is_finite() {
            return Err(WeightError::NotFinite(value));
        }
        let scaled = value * SCALE as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 {
            return Err(WeightError::NotHundredths(value));
        }
        Ok(Weight(rounded as i64))
    }

    /// `numerator / denominator` rounded half-up to hundredths.
    ///
    /// Both arguments must be non-negative and `denominator` positive.
    pub fn ratio_half_up(numerator: u64, denominator: u64) -> Self {
        assert!(denominator > 0, "ratio with zero denominator");
        let n = numerator as u128 * 2 * SCALE as u128 + denominator as u128;
        let d = 2 * denominator as u128;
        Weight((n / d) as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn doubled(self) -> Self {
        Weight(self.0 * 2)
    }

    pub fn checked_sub(self, other: Weight) -> Weight {
        Weight(self.0 - other.0)
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl Add for Weight {
    type Output = Weight;
    fn add(self, rhs: Weight) -> Weight {
        Weight(self.0 + rhs.0)
    }
}

impl Sum for Weight {
    fn sum<I: Iterator<Item = Weight>>(iter: I) -> Weight {
        iter.fold(Weight::ZERO, Add::add)
    }
}

impl fmt::Display for Weight {
    /// Shortest decimal form: `1`, `1.5`, `0.35`, `-0.06`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / SCALE as u64;
        let frac = abs % SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{whole}")
        } else if frac.is_multiple_of(10) {
            write!(f, "{sign}{whole}.{}", frac / 10)
        } else {
            write!(f, "{sign}{whole}.{frac:02}")
        }
    }
}

impl FromStr for Weight {
    type Err = WeightError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let v: f64 = t.parse().map_err(|_| WeightError::Parse(s.to_string()))?;
        Weight::from_f64(v)
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Weight::from_f64(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_rounds_half_up() {
        assert_eq!(Weight::ratio_half_up(35, 100), Weight(35));
        assert_eq!(Weight::ratio_half_up(0, 7), Weight(0));
        assert_eq!(Weight::ratio_half_up(7, 7), Weight(100));
        // 1/8 = 0.125 -> 0.13
        assert_eq!(Weight::ratio_half_up(1, 8), Weight(13));
        // 1/3 = 0.333.. -> 0.33
        assert_eq!(Weight::ratio_half_up(1, 3), Weight(33));
    }

    #[test]
    fn display_is_shortest() {
        assert_eq!(Weight(100).to_string(), "1");
        assert_eq!(Weight(150).to_string(), "1.5");
        assert_eq!(Weight(35).to_string(), "0.35");
        assert_eq!(Weight(-6).to_string(), "-0.06");
        assert_eq!(Weight(122).to_string(), "1.22");
    }

    #[test]
    fn from_f64_rejects_off_grid() {
        assert_eq!(Weight::from_f64(0.29), Ok(Weight(29)));
        assert!(Weight::from_f64(0.605).is_err());
        assert!(Weight::from_f64(f64::NAN).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let w = Weight(29);
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, "0.29");
        let back: Weight = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
