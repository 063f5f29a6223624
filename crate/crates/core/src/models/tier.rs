use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exact positive channel-width multiplier, written `"1/4"`, `"0.25"` or `"4"`.
///
/// Multiples of 1/32 only, so every scaled layer width (base widths are
/// multiples of 32) is an exact integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Multiplier(Rational64);

impl Multiplier {
    pub const ONE: Multiplier = Multiplier(Rational64::new_raw(1, 1));

    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::arg("multiplier denominator is zero"));
        }
        Self::from_ratio(Rational64::new(numer, denom))
    }

    fn from_ratio(r: Rational64) -> Result<Self> {
        if r <= Rational64::from_integer(0) {
            return Err(Error::arg(format!("multiplier {r} must be positive")));
        }
        if !(r * Rational64::from_integer(32)).is_integer() {
            return Err(Error::arg(format!(
                "multiplier {r} is not a multiple of 1/32"
            )));
        }
        Ok(Multiplier(r))
    }

    pub fn ratio(&self) -> Rational64 {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `base × multiplier`, at least one channel.
    pub fn scale(&self, base: usize) -> usize {
        let v = (self.0 * Rational64::from_integer(base as i64)).floor();
        (v.to_integer().max(1)) as usize
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Multiplier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("bad multiplier {s:?}")))?;
            let d: i64 = d
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("bad multiplier {s:?}")))?;
            return Self::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            let digits = frac.len() as u32;
            if digits > 9 {
                return Err(Error::arg(format!("too many decimals in {s:?}")));
            }
            let scale = 10i64.pow(digits);
            let whole: i64 = if int.is_empty() {
                0
            } else {
                int.parse()
                    .map_err(|_| Error::arg(format!("bad multiplier {s:?}")))?
            };
            let part: i64 = if frac.is_empty() {
                0
            } else {
                frac.parse()
                    .map_err(|_| Error::arg(format!("bad multiplier {s:?}")))?
            };
            return Self::new(whole * scale + part, scale);
        }
        let n: i64 = s
            .parse()
            .map_err(|_| Error::arg(format!("bad multiplier {s:?}")))?;
        Self::new(n, 1)
    }
}

impl Serialize for Multiplier {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Multiplier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Classifier capacity: a named channel-width multiplier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CapacityTier {
    pub name: String,
    pub multiplier: Multiplier,
}

impl CapacityTier {
    pub fn new(name: impl Into<String>, multiplier: Multiplier) -> Self {
        CapacityTier {
            name: name.into(),
            multiplier,
        }
    }

    /// Tier named after its multiplier, e.g. `x1/4`.
    pub fn from_multiplier(multiplier: Multiplier) -> Self {
        CapacityTier {
            name: format!("x{multiplier}"),
            multiplier,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(Self::from_multiplier(s.parse()?))
    }

    pub fn standard() -> Self {
        Self::from_multiplier(Multiplier::ONE)
    }
}
